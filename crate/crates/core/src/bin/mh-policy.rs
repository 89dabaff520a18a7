use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mh_policy::harness::{
    compare_runtimes, lemma_grid, lemma_table, run_experiment, Algorithm, Experiment, RunConfig,
};
use mh_policy::Error;

#[derive(Parser)]
#[command(name = "mh-policy", version, about = "Annealed Metropolis-Hastings policy search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all trials of one algorithm and write traces plus a report.
    Run(RunArgs),
    /// Time MH against REINFORCE at matched settings.
    CompareRuntimes(RuntimeArgs),
    /// Print off-maximum posterior mass on a utility grid across temperatures.
    LemmaCheck(LemmaArgs),
}

/// Config file plus per-field overrides; a flag always wins over the file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, alias = "master-seed")]
    seed: Option<u64>,
    #[arg(long, alias = "output-dir")]
    out: Option<PathBuf>,
    #[arg(long)]
    n_iterations: Option<usize>,
    #[arg(long)]
    initial_temperature: Option<f64>,
    #[arg(long)]
    cooling_rate: Option<f64>,
    #[arg(long)]
    proposal_sigma: Option<f64>,
    #[arg(long)]
    prior_sigma: Option<f64>,
    #[arg(long)]
    burn_in_fraction: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    buffer_size: Option<usize>,
    #[arg(long)]
    num_states: Option<usize>,
    #[arg(long)]
    num_actions: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    record_wall_clock: Option<bool>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => match self.experiment {
                Some(Experiment::Cartpole) => RunConfig::cartpole_default(),
                _ => RunConfig::random_mdp_default(),
            },
        };
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag.clone() {
                    c.$($field).+ = v;
                }
            };
        }
        set!(algorithm => algorithm);
        set!(experiment => experiment);
        set!(trials => trials);
        set!(seed => master_seed);
        set!(out => output_dir);
        set!(n_iterations => n_iterations);
        set!(initial_temperature => mh.initial_temperature);
        set!(cooling_rate => mh.cooling_rate);
        set!(proposal_sigma => mh.proposal_sigma);
        set!(prior_sigma => mh.prior_sigma);
        set!(burn_in_fraction => mh.burn_in_fraction);
        set!(learning_rate => pg.learning_rate);
        set!(batch_size => estimator.batch_size);
        set!(buffer_size => estimator.buffer_size);
        set!(num_states => mdp_dims.num_states);
        set!(num_actions => mdp_dims.num_actions);
        set!(hidden_size => hidden_size);
        set!(eval_episodes => eval_episodes);
        set!(record_wall_clock => record_wall_clock);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct RuntimeArgs {
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long, default_value_t = 11)]
    grid_size: usize,
    #[arg(long, default_value_t = 0.05)]
    gap: f64,
    /// Temperatures to evaluate, in order.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.1, 0.01, 0.001])]
    temperatures: Vec<f64>,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let config = args.overrides.resolve()?;
            let (report, _) = run_experiment(&config)?;
            let last = report.mean.len() - 1;
            println!(
                "{:?} on {:?}: {} trials x {} iterations",
                config.algorithm, config.experiment, config.trials, config.n_iterations
            );
            println!("final reward mean {:.6} (std {:.6})", report.mean[last], report.std[last]);
            println!("final policy evaluation {:.6}", report.final_eval);
            if let Some(oracle) = &report.oracle_values {
                println!("oracle optimum (mean) {:.6}", oracle.iter().sum::<f64>() / oracle.len() as f64);
            }
            println!("runtime {:.3} s, outputs in {}", report.runtime_s, config.output_dir.display());
        }
        Command::CompareRuntimes(args) => {
            let config = args.overrides.resolve()?;
            let cmp = compare_runtimes(&config)?;
            println!("{}", serde_json::to_string(&cmp)?);
        }
        Command::LemmaCheck(args) => {
            let utilities = lemma_grid(args.grid_size, args.gap)?;
            let priors = vec![0.0; utilities.len()];
            let threshold = args.gap / (20.0 * (args.grid_size as f64).ln());
            let mut temps = args.temperatures.clone();
            temps.push(threshold);
            println!("temperature,off_max_mass");
            for row in lemma_table(&utilities, &priors, &temps)? {
                println!("{:e},{:e}", row.temperature, row.off_max_mass);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Validation { .. } | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
