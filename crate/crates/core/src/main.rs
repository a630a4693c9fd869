fn main() {
    std::process::exit(ksp_core::cli::run(std::env::args_os()));
}
