use std::collections::BTreeMap;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let env: BTreeMap<String, String> = std::env::vars().collect();
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let code = toolsmith_cli::run_command(
        &argv,
        &env,
        &mut toolsmith_cli::Io {
            input: &mut input,
            out: &mut out,
            err: &mut err,
        },
    );
    std::process::exit(code);
}
