use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hmlabel::eval::{
    map_labeller_for, run_comparison, run_noise_sweep, run_pipelines, write_comparison_outputs, write_sweep_outputs,
    ExperimentConfig, Pipelines, Prepared, SceneEntry,
};
use hmlabel::fusion::write_frame_log;
use hmlabel::grid::{write_label_csv, write_label_grid, HeightField};
use hmlabel::mapseg::{label_snapshot, receptive_field, ConvSpec, MapContext};
use hmlabel::render::{make_trajectory, render_view, write_depth_pgm, write_label_pgm, write_trajectory_csv};
use hmlabel::scene::{generate_scene, grid_over_extent, rasterize_ground_truth, Scene};
use hmlabel::Result;

/// Semantic height-map labelling simulator: view-based fusion versus
/// map-based sliding-window labelling.
#[derive(Parser, Debug)]
#[command(name = "hmlabel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scene and its ground-truth rasters.
    GenScene(Common),
    /// Render depth and label frames along a browsing trajectory.
    Render(Common),
    /// Run the view-based pipeline on one scene.
    RunView(Common),
    /// Reconstruct one scene and label the final map with a sliding window.
    RunMap(Common),
    /// Compare both pipelines over all configured scenes and seeds.
    Compare(Common),
    /// Sweep pose and depth noise for both pipelines.
    SweepNoise(Common),
    /// Print the theoretical receptive field of a conv stack.
    Rf {
        /// Comma-separated layers `K[sS][dD]`, e.g. `3s2,3s1d2`.
        #[arg(long)]
        layers: String,
    },
    /// Convert a saved reconstruction state into plain output formats.
    Export {
        /// State CSV written by run-view or run-map.
        #[arg(long)]
        state: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON); unset fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed for compare and sweep-noise; scene and run seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Frames per run.
    #[arg(long)]
    frames: Option<usize>,
    /// Map vertices per side.
    #[arg(long)]
    map_size: Option<usize>,
    /// Pose translation sigma (m).
    #[arg(long)]
    sigma_pose: Option<f64>,
    /// Depth sigma (m).
    #[arg(long)]
    sigma_depth: Option<f64>,
    /// Distance-decay rate of the measurement model (1/m); default 1.0.
    #[arg(long)]
    alpha: Option<f64>,
    /// Frames between checkpoints.
    #[arg(long)]
    cadence: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

/// Whether `--seed` addresses the master seed or a single scene.
#[derive(Clone, Copy, PartialEq)]
enum SeedScope {
    Master,
    Scene,
}

impl Common {
    fn resolve(&self, scope: SeedScope) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            match scope {
                SeedScope::Master => cfg.master_seed = seed,
                SeedScope::Scene => {
                    let counts = cfg.scenes.first().map_or([2, 2, 2], |s| s.counts);
                    cfg.scenes = vec![SceneEntry { seed, counts }];
                    cfg.seeds = vec![seed];
                }
            }
        }
        if scope == SeedScope::Scene {
            cfg.scenes.truncate(1);
            cfg.seeds.truncate(1);
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag {
                    cfg.$field = v;
                }
            )*};
        }
        set!(jobs => jobs, frames => frames, map_size => map_size, sigma_pose => sigma_pose,
             sigma_depth => sigma_depth, alpha => alpha, cadence => cadence);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn gen_scene(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let grid = grid_over_extent(cfg.extent, (cfg.map_size, cfg.map_size))?;
    let entry = &cfg.scenes[0];
    let spec = generate_scene(cfg.extent, grid.resolution, entry.counts, entry.seed)?;
    fs::write(out.join("scene.json"), spec.to_json()? + "\n")?;
    let gt = rasterize_ground_truth(&Scene::new(spec), &grid)?;
    hmlabel::grid::write_pgm16_linear(create(out, "gt_heights.pgm")?, &gt.heights)?;
    write_label_grid(create(out, "gt_labels.txt")?, &gt.labels)?;
    Ok(())
}

fn render(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let grid = grid_over_extent(cfg.extent, (cfg.map_size, cfg.map_size))?;
    let entry = &cfg.scenes[0];
    let scene = Scene::new(generate_scene(cfg.extent, grid.resolution, entry.counts, entry.seed)?);
    let seed = hmlabel::rng::mix_key(&[cfg.master_seed, entry.seed, hmlabel::rng::tag::TRAJECTORY]);
    let poses = make_trajectory(&scene, cfg.frames.max(1), &cfg.trajectory, seed)?;
    write_trajectory_csv(create(out, "trajectory.csv")?, &poses)?;
    for (i, pose) in poses.iter().enumerate() {
        let frame = render_view(&scene, pose, &cfg.intrinsics, i)?;
        write_depth_pgm(create(out, &format!("depth_{i:04}.pgm"))?, &frame.depth)?;
        write_label_pgm(create(out, &format!("labels_{i:04}.pgm"))?, &frame.labels)?;
    }
    Ok(())
}

fn write_field(field: &HeightField, out: &Path) -> Result<()> {
    field.write_state_csv(create(out, "state.csv")?)?;
    field.write_height_pgm(create(out, "heights.pgm")?)?;
    Ok(())
}

fn run_one(cfg: &ExperimentConfig, out: &Path, which: Pipelines) -> Result<()> {
    fs::create_dir_all(out)?;
    let prep = Prepared::new(cfg)?;
    let seed = cfg.seeds[0];
    let run = run_pipelines(&prep, 0, seed, cfg.sigma_pose, cfg.sigma_depth, which)?;
    hmlabel::eval::write_comparison_csv(
        create(out, "checkpoints.csv")?,
        std::slice::from_ref(&run.result),
        cfg.record_wallclock,
    )?;
    if cfg.record_wallclock {
        write_frame_log(create(out, "frames.csv")?, &run.records)?;
    }
    write_field(&run.field, out)?;
    if which.view {
        let labels = run.field.argmax_labels();
        write_label_grid(create(out, "view_labels.txt")?, &labels)?;
        run.field.write_posterior_csv(create(out, "posterior.csv")?)?;
    }
    if which.map {
        let (_, gt) = &prep.scenes[0];
        let map = map_labeller_for(&prep, 0, seed)?;
        let ctx = MapContext {
            truth: Some(&gt.labels),
            reference: Some(&gt.heights),
            stream: cfg.frames as u64,
        };
        let (labels, _) = label_snapshot(&run.field, &map, &prep.plan, &ctx, cfg.jobs)?;
        write_label_grid(create(out, "map_labels.txt")?, &labels)?;
        write_label_csv(create(out, "map_labels.csv")?, &labels)?;
        fs::write(out.join("tiles.json"), prep.plan.to_json()? + "\n")?;
        if run.field.coverage() < cfg.coverage_threshold {
            eprintln!(
                "warning: coverage {:.3} below threshold {}; map labels include unobserved vertices as background",
                run.field.coverage(),
                cfg.coverage_threshold
            );
        }
    }
    Ok(())
}

fn export(state: &Path, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let field = HeightField::read_state_csv(BufReader::new(File::open(state)?))?;
    field.write_height_pgm(create(out, "heights.pgm")?)?;
    field.write_height_csv(create(out, "heights.csv")?)?;
    field.write_posterior_csv(create(out, "posterior.csv")?)?;
    write_label_grid(create(out, "labels.txt")?, &field.argmax_labels())?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let (common, scope) = match &cli.command {
        Command::Rf { layers } => {
            let spec: ConvSpec = layers.parse()?;
            let (rx, ry) = receptive_field(&spec);
            if rx == ry {
                println!("{rx}");
            } else {
                println!("{rx} {ry}");
            }
            return Ok(());
        }
        Command::Export { state, out } => return export(state, out),
        Command::Compare(c) | Command::SweepNoise(c) => (c, SeedScope::Master),
        Command::GenScene(c) | Command::Render(c) | Command::RunView(c) | Command::RunMap(c) => (c, SeedScope::Scene),
    };
    let cfg = common.resolve(scope)?;
    if common.dry_run {
        // a closed pipe is not an error for a printout
        let _ = writeln!(std::io::stdout(), "{}", cfg.to_json()?);
        return Ok(());
    }
    let out = &common.out;
    match cli.command {
        Command::GenScene(_) => gen_scene(&cfg, out),
        Command::Render(_) => render(&cfg, out),
        Command::RunView(_) => run_one(&cfg, out, Pipelines { view: true, map: false }),
        Command::RunMap(_) => run_one(&cfg, out, Pipelines { view: false, map: true }),
        Command::Compare(_) => {
            let prep = Prepared::new(&cfg)?;
            let runs = run_comparison(&prep)?;
            write_comparison_outputs(out, &prep, &runs)
        }
        Command::SweepNoise(_) => {
            let prep = Prepared::new(&cfg)?;
            let cells = run_noise_sweep(&prep)?;
            write_sweep_outputs(out, &cells)
        }
        Command::Rf { .. } | Command::Export { .. } => unreachable!("handled before config resolution"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
