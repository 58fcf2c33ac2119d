fn main() {
    std::process::exit(mpmix::cli::run_cli(std::env::args_os()));
}
