fn main() {
    std::process::exit(gseo_core::cli::dispatch(std::env::args_os()));
}
