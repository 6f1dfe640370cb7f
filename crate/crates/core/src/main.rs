fn main() {
    std::process::exit(cfm_motion::cli::run(std::env::args_os()));
}
