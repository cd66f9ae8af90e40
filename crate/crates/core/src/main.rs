fn main() {
    std::process::exit(szbov_core::cli::run_from(std::env::args_os()));
}
