fn main() {
    std::process::exit(pwl_fhn_cli::run(std::env::args_os()));
}
