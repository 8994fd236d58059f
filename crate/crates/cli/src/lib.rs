//! The `fer` command line: argument definitions, the experiment
//! configuration file and the stage drivers.
//!
//! Exit codes: 0 on success, 2 when inputs or configuration fail
//! validation, 1 when a stage fails while running.

pub mod args;
pub mod commands;
pub mod config;
pub mod pipeline;

use std::fmt;
use std::path::Path;

use clap::Parser;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

/// Inputs rejected before any work begins.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

pub fn require_file(path: &Path) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("file not found: {}", path.display())))
    }
}

fn core_is_validation(e: &fer_core::Error) -> bool {
    use fer_core::Error as E;
    match e {
        E::Label { .. }
        | E::ManifestFormat { .. }
        | E::Composition { .. }
        | E::InvalidManifest { .. }
        | E::Config(_)
        | E::Partition(_) => true,
        E::Model(inner) => inner.downcast_ref::<fer_nets::Error>().is_some_and(nets_is_validation),
        _ => false,
    }
}

fn nets_is_validation(e: &fer_nets::Error) -> bool {
    use fer_nets::Error as E;
    match e {
        E::Spec(_) | E::Incompatible(_) | E::Input(_) | E::Config(_) => true,
        E::Core(inner) => core_is_validation(inner),
        _ => false,
    }
}

/// Maps a failure to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ValidationError>() || cause.is::<config::ConfigErrors>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<fer_core::Error>() {
            return if core_is_validation(e) {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            };
        }
        if let Some(e) = cause.downcast_ref::<fer_nets::Error>() {
            return if nets_is_validation(e) {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            };
        }
    }
    EXIT_RUNTIME
}

/// Per-invocation options shared by every subcommand.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ctx {
    pub dry_run: bool,
}

impl Ctx {
    /// In dry-run mode prints the plan and returns true, meaning the caller
    /// must stop before writing anything.
    pub fn plan(&self, text: impl fmt::Display) -> bool {
        if self.dry_run {
            println!("plan: {text}");
        }
        self.dry_run
    }
}

fn init_logging(cli: &args::Cli) {
    use tracing_subscriber::EnvFilter;

    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false);
    // A second initialization in the same process (tests) is harmless.
    let _ = if cli.log_json {
        builder.json().try_init()
    } else {
        builder.try_init()
    };
}

/// Parses `argv`, runs the command and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    init_logging(&cli);
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return EXIT_VALIDATION;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            tracing::warn!(error = %e, "worker pool already initialized");
        }
    }
    let ctx = Ctx { dry_run: cli.dry_run };
    match commands::dispatch(&ctx, &cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            code
        }
    }
}
