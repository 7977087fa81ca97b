fn main() {
    std::process::exit(vdm_cli::run(std::env::args_os()));
}
