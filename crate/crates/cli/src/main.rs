use std::io::Write;
use std::process::ExitCode;

use anyhow::{Context, Result};
use channelrpc_cli::config::resolve_template;
use channelrpc_cli::daemon::{self, parse_address};
use channelrpc_cli::{render_value, scenario};
use channelrpc::binding::{ANSWERER_OBJECT, REGISTRY_OBJECT, RELOCATION_OBJECT};
use clap::{Parser, Subcommand};

const DEFAULT_REGISTRY: &str = "tcp://127.0.0.1:7070/Registry";

#[derive(Parser)]
#[command(name = "channelrpc", version, about = "Remote calls through configurable channels")]
struct Cli {
    /// Append engine trace lines to this file.
    #[arg(long, global = true)]
    trace: Option<std::path::PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the naming registry.
    Registry {
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
    },
    /// Run the relocation manager.
    Relocmgr {
        #[arg(long, default_value = "127.0.0.1:7071")]
        listen: String,
    },
    /// Serve an Answerer and register it.
    Serve {
        #[arg(long)]
        name: String,
        /// Template file or bundled name; overrides CHANNELRPC_TEMPLATE.
        #[arg(long)]
        template: Option<String>,
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        #[arg(long, default_value = DEFAULT_REGISTRY)]
        registry: String,
        #[arg(long)]
        relocmgr: Option<String>,
    },
    /// Call a registered service once and print the result.
    Call {
        #[arg(long)]
        name: String,
        #[arg(long)]
        method: String,
        #[arg(long = "arg")]
        args: Vec<String>,
        #[arg(long)]
        template: Option<String>,
        #[arg(long, default_value = DEFAULT_REGISTRY)]
        registry: String,
    },
    /// Run a scenario script (a file or a bundled name) and print its trace.
    Scenario {
        script: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn sink(path: &Option<std::path::PathBuf>) -> Result<Option<Box<dyn Write + Send>>> {
    let Some(p) = path else { return Ok(None) };
    let f = std::fs::OpenOptions::new().create(true).append(true).open(p).with_context(|| format!("opening {}", p.display()))?;
    Ok(Some(Box::new(f)))
}

fn announce(what: &str, l: &channelrpc::stream::Listener) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{what} listening at {}", l.address())?;
    out.flush()?;
    Ok(())
}

fn park() -> ! {
    loop {
        std::thread::park();
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Registry { listen } => {
            let l = daemon::start_registry(&daemon::node(sink(&cli.trace)?), &parse_address(&listen, REGISTRY_OBJECT)?)?;
            announce("registry", &l)?;
            park()
        }
        Command::Relocmgr { listen } => {
            let l = daemon::start_relocation_manager(&daemon::node(sink(&cli.trace)?), &parse_address(&listen, RELOCATION_OBJECT)?)?;
            announce("relocation manager", &l)?;
            park()
        }
        Command::Serve { name, template, listen, registry, relocmgr } => {
            let template = resolve_template(template.as_deref(), "empty")?;
            let manager = relocmgr.map(|m| parse_address(&m, RELOCATION_OBJECT)).transpose()?;
            let n = daemon::node(sink(&cli.trace)?);
            let l = daemon::start_server(&n, &name, &parse_address(&listen, ANSWERER_OBJECT)?, &template, &parse_address(&registry, REGISTRY_OBJECT)?, manager.as_ref())?;
            announce(&name, &l)?;
            park()
        }
        Command::Call { name, method, args, template, registry } => {
            let template = resolve_template(template.as_deref(), "empty")?;
            let n = daemon::node(sink(&cli.trace)?);
            match daemon::call(&n, &parse_address(&registry, REGISTRY_OBJECT)?, &name, &method, &args, &template) {
                Ok(v) => {
                    println!("{}", render_value(&v));
                    Ok(ExitCode::SUCCESS)
                }
                Err(f) => {
                    eprintln!("{f}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Scenario { script, seed } => {
            let report = scenario::run(&scenario::load_script(&script)?, seed)?;
            print!("{}", report.trace);
            if let Some(path) = &cli.trace {
                std::fs::write(path, &report.trace).with_context(|| format!("writing {}", path.display()))?;
            }
            for e in &report.expectations {
                match &e.failure {
                    None => eprintln!("pass\tline {}\t{}", e.line, e.text),
                    Some(why) => eprintln!("FAIL\tline {}\t{}\t{why}", e.line, e.text),
                }
            }
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
