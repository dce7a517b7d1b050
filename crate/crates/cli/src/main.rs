fn main() {
    std::process::exit(coulomb_lab_cli::run(std::env::args_os()));
}
