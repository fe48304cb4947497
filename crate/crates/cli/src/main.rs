fn main() {
    std::process::exit(numrep_cli::dispatch(std::env::args_os()));
}
