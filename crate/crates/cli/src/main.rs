fn main() {
    std::process::exit(vhred_cli::run(std::env::args_os()));
}
