fn main() {
    std::process::exit(ccnet::cli::run_command(std::env::args_os()));
}
