fn main() {
    std::process::exit(sdarecon::cli::main_with(std::env::args_os()));
}
