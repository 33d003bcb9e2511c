fn main() {
    std::process::exit(sloppy_lab_cli::run(std::env::args_os()));
}
