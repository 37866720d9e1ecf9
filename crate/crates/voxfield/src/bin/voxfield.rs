fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DVGO_LOG", "info")).init();
    std::process::exit(voxfield::cli::run(std::env::args_os()));
}
