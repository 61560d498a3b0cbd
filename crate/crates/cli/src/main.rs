use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("HAR_LOG", "info")).init();
    std::process::exit(har_cli::main_with_args(std::env::args_os()));
}
