use std::io;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = sentprobe::cli::run(std::env::args_os(), &mut io::stdout().lock());
    std::process::exit(code);
}
