fn main() {
    std::process::exit(bilip_cli::run(std::env::args_os()));
}
