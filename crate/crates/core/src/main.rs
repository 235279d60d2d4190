fn main() {
    std::process::exit(purse_core::pipeline::cli::run(std::env::args_os()));
}
