fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(ohcsupport::cli::cli_main(&args));
}
