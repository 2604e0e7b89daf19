fn main() {
    std::process::exit(mvslab::cli::run_command(std::env::args_os()));
}
