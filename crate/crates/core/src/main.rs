fn main() {
    std::process::exit(idcnn::cli::run(std::env::args_os()));
}
