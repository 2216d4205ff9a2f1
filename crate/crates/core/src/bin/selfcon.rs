fn main() {
    std::process::exit(selfcon_core::cli::run(std::env::args_os()));
}
