fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SEQKRIG_LOG")).init();
    std::process::exit(seqkrig::cli::run_from(std::env::args_os()));
}
