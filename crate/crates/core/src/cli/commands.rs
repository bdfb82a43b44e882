use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::aggregation::{r_nnet_event, r_nnet_event_od};
use crate::dedup::{compute_duplicity, DedupInputs, DedupMethod};
use crate::error::{Error, Result};
use crate::geolocation::{emission_for, fit_all, geolocate_all, write_outputs};
use crate::inference::{
    compute_dedup_factors, compute_distr_params, compute_initial_population, compute_population_od,
    compute_population_t, StatsTable,
};
use crate::io;
use crate::simulator::{simulate, write_simulation};

use super::cache::{cache_key, prepare_output, Cache};
use super::config::PipelineConfig;

/// Output file names.
pub mod outputs {
    pub const DUPLICITY: &str = "duplicity.csv";
    pub const NNET: &str = "nnet.csv";
    pub const NNET_OD: &str = "nnet_od.csv";
    pub const POPULATION_STATS: &str = "population_stats.csv";
    pub const POPULATION_DRAWS: &str = "population_draws.csv";
    pub const POPULATION_T_STATS: &str = "population_t_stats.csv";
    pub const POPULATION_T_DRAWS: &str = "population_t_draws.csv";
    pub const POPULATION_OD_STATS: &str = "population_od_stats.csv";
    pub const POPULATION_OD_DRAWS: &str = "population_od_draws.csv";
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub name: &'static str,
    pub cache_hit: bool,
    pub elapsed: Duration,
    pub output_dir: PathBuf,
}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingUpstream {
            path: path.to_path_buf(),
            producer,
        })
    }
}

/// Settings as JSON with worker counts removed, so they do not affect cache keys.
fn settings_json(value: &impl Serialize) -> serde_json::Value {
    let mut v = serde_json::to_value(value).expect("serializable settings");
    strip_workers(&mut v);
    v
}

fn strip_workers(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("workers");
            map.values_mut().for_each(strip_workers);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_workers),
        _ => {}
    }
}

fn run_step(
    cfg: &PipelineConfig,
    name: &'static str,
    settings: serde_json::Value,
    inputs: &[&Path],
    out_dir: &Path,
    compute: impl FnOnce(&Path) -> Result<()>,
) -> Result<StepReport> {
    let start = Instant::now();
    let report = |cache_hit| StepReport {
        name,
        cache_hit,
        elapsed: start.elapsed(),
        output_dir: out_dir.to_path_buf(),
    };
    if cfg.no_cache {
        prepare_output(out_dir)?;
        compute(out_dir)?;
        return Ok(report(false));
    }
    let cache = Cache::open(&cfg.cache_dir)?;
    let key = cache_key(name, &settings, inputs)?;
    if cache.restore(&key, out_dir)? {
        log::info!("{name}: cache hit {}", &key[..12]);
        return Ok(report(true));
    }
    log::info!("{name}: computing ({})", &key[..12]);
    prepare_output(out_dir)?;
    compute(out_dir)?;
    cache.store(&key, name, out_dir)?;
    Ok(report(false))
}

pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<StepReport> {
    let scenario = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| Error::invalid("the configuration has no [scenario] section"))?;
    run_step(cfg, "simulate", settings_json(scenario), &[], &cfg.sim_dir(), |out| {
        write_simulation(out, &simulate(scenario)?)
    })
}

pub fn cmd_geolocate(cfg: &PipelineConfig) -> Result<StepReport> {
    let inp = cfg.inputs();
    for p in [&inp.events, &inp.signal, &inp.grid, &inp.simulation] {
        require(p, "simulate")?;
    }
    let g = &cfg.geolocation;
    run_step(
        cfg,
        "geolocate",
        settings_json(g),
        &[&inp.events, &inp.signal, &inp.grid, &inp.simulation],
        &cfg.geolocation_dir(),
        |out| {
            let grid = io::read_grid(&inp.grid)?;
            let axis = io::read_simulation_params(&inp.simulation)?;
            let events = io::read_events(&inp.events)?;
            let signal = io::read_signal(&inp.signal, &grid)?;
            let emission = emission_for(&signal, &g.model)?;
            let results = geolocate_all(&events, &emission, &grid, &axis, &g.model)?;
            write_outputs(out, &results, &g.posterior_prefix, &g.joint_prefix)
        },
    )
}

pub fn cmd_dedup(cfg: &PipelineConfig) -> Result<StepReport> {
    let inp = cfg.inputs();
    for p in [&inp.events, &inp.signal, &inp.grid, &inp.simulation] {
        require(p, "simulate")?;
    }
    let geo_dir = cfg.geolocation_dir();
    let trajectory = cfg.dedup.method == DedupMethod::Trajectory;
    let mut inputs: Vec<&Path> = vec![&inp.events, &inp.signal, &inp.grid, &inp.simulation];
    if let Some(c) = &inp.antenna_cells {
        require(c, "simulate")?;
        inputs.push(c);
    }
    if trajectory {
        require(&geo_dir, "geolocate")?;
        inputs.push(&geo_dir);
    }
    let settings = serde_json::json!({
        "dedup": settings_json(&cfg.dedup),
        "geolocation": settings_json(&cfg.geolocation),
    });
    run_step(cfg, "dedup", settings, &inputs, &cfg.dedup_dir(), |out| {
        let grid = io::read_grid(&inp.grid)?;
        let events = io::read_events(&inp.events)?;
        let cells = inp.antenna_cells.as_ref().map(io::read_antenna_cells).transpose()?;
        let g = &cfg.geolocation;
        let (models, posteriors) = if trajectory {
            (Vec::new(), io::read_posteriors(&geo_dir, &g.posterior_prefix)?)
        } else {
            let axis = io::read_simulation_params(&inp.simulation)?;
            let signal = io::read_signal(&inp.signal, &grid)?;
            let emission = emission_for(&signal, &g.model)?;
            (fit_all(&events, &emission, &grid, &axis, &g.model)?, Vec::new())
        };
        let table = compute_duplicity(
            &cfg.dedup,
            &DedupInputs {
                events: &events,
                cells: cells.as_ref(),
                grid: &grid,
                adjacency: g.model.adjacency,
                models: &models,
                posteriors: &posteriors,
            },
        )?;
        io::write_duplicity(out.join(outputs::DUPLICITY), &table)
    })
}

pub fn cmd_aggregate(cfg: &PipelineConfig) -> Result<StepReport> {
    let inp = cfg.inputs();
    let geo_dir = cfg.geolocation_dir();
    let dup = cfg.dedup_dir().join(outputs::DUPLICITY);
    for p in [&inp.regions, &inp.grid, &inp.simulation] {
        require(p, "simulate")?;
    }
    require(&geo_dir, "geolocate")?;
    require(&dup, "dedup")?;
    let settings = serde_json::json!({
        "aggregation": settings_json(&cfg.aggregation),
        "prefixes": [&cfg.geolocation.posterior_prefix, &cfg.geolocation.joint_prefix],
    });
    run_step(
        cfg,
        "aggregate",
        settings,
        &[&dup, &inp.regions, &inp.grid, &inp.simulation, &geo_dir],
        &cfg.aggregation_dir(),
        |out| {
            let grid = io::read_grid(&inp.grid)?;
            let axis = io::read_simulation_params(&inp.simulation)?;
            let regions = io::read_regions(&inp.regions, &grid)?;
            let dup = io::read_duplicity(&dup)?;
            let g = &cfg.geolocation;
            let posteriors = io::read_posteriors(&geo_dir, &g.posterior_prefix)?;
            let joints = io::read_joints(&geo_dir, &g.joint_prefix, axis.increment)?;
            let times = axis.times();
            let nnet = r_nnet_event(&dup, &regions, &posteriors, &times, &cfg.aggregation)?;
            io::write_count_draws(out.join(outputs::NNET), &nnet)?;
            let od = r_nnet_event_od(&dup, &regions, &joints, &times, &cfg.aggregation)?;
            io::write_od_draws(out.join(outputs::NNET_OD), &od)
        },
    )
}

pub fn cmd_infer(cfg: &PipelineConfig) -> Result<StepReport> {
    let inp = cfg.inputs();
    let geo_dir = cfg.geolocation_dir();
    let dup = cfg.dedup_dir().join(outputs::DUPLICITY);
    let nnet = cfg.aggregation_dir().join(outputs::NNET);
    let nnet_od = cfg.aggregation_dir().join(outputs::NNET_OD);
    for p in [&inp.regions, &inp.grid, &inp.simulation, &inp.register, &inp.pnt_rate] {
        require(p, "simulate")?;
    }
    require(&geo_dir, "geolocate")?;
    require(&dup, "dedup")?;
    require(&nnet, "aggregate")?;
    require(&nnet_od, "aggregate")?;
    let settings = serde_json::json!({
        "inference": settings_json(&cfg.inference),
        "prefix": &cfg.geolocation.posterior_prefix,
    });
    run_step(
        cfg,
        "infer",
        settings,
        &[
            &dup,
            &inp.regions,
            &inp.grid,
            &inp.simulation,
            &inp.register,
            &inp.pnt_rate,
            &nnet,
            &nnet_od,
            &geo_dir,
        ],
        &cfg.inference_dir(),
        |out| {
            let grid = io::read_grid(&inp.grid)?;
            let axis = io::read_simulation_params(&inp.simulation)?;
            let regions = io::read_regions(&inp.regions, &grid)?;
            let dup = io::read_duplicity(&dup)?;
            let posteriors = io::read_posteriors(&geo_dir, &cfg.geolocation.posterior_prefix)?;
            let register = io::read_register(&inp.register)?;
            let rate = io::read_penetration_rate(&inp.pnt_rate)?;
            let nnet = io::read_count_draws(&nnet)?;
            let od = io::read_od_draws(&nnet_od)?;
            let model = &cfg.inference.model;
            let write_draws = cfg.inference.write_draws;

            let omega = compute_dedup_factors(&dup, &posteriors, &regions, axis.start)?;
            let params = compute_distr_params(&omega, &register, &rate)?;
            let (stats, draws) = compute_initial_population(&nnet, Some(axis.start), &params, model)?;
            io::write_stats(out.join(outputs::POPULATION_STATS), &stats)?;
            if write_draws {
                io::write_population_draws(out.join(outputs::POPULATION_DRAWS), &draws)?;
            }
            let (stats_t, draws_t) = compute_population_t(&draws, &od, model)?;
            io::write_stats(out.join(outputs::POPULATION_T_STATS), &stats_t)?;
            if write_draws {
                io::write_population_t_draws(out.join(outputs::POPULATION_T_DRAWS), &draws_t)?;
            }
            let (stats_od, draws_od) = compute_population_od(&draws, &od, model)?;
            io::write_stats(out.join(outputs::POPULATION_OD_STATS), &stats_od)?;
            if write_draws {
                io::write_population_od_draws(out.join(outputs::POPULATION_OD_DRAWS), &draws_od)?;
            }
            Ok(())
        },
    )
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub steps: Vec<StepReport>,
    pub population: StatsTable<u32>,
}

impl PipelineReport {
    pub fn all_cached(&self) -> bool {
        self.steps.iter().all(|s| s.cache_hit)
    }

    /// Per-step timing followed by the initial population statistics.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for step in &self.steps {
            let _ = writeln!(
                s,
                "{:<10} {:>9.3}s {}",
                step.name,
                step.elapsed.as_secs_f64(),
                if step.cache_hit { "cached" } else { "computed" }
            );
        }
        let _ = writeln!(
            s,
            "\n{:>6} {:>9} {:>7} {:>9} {:>7} {:>7} {:>9} {:>9}",
            "region", "Mean", "Mode", "Median", "Min", "Max", "CI_LOW", "CI_HIGH"
        );
        for (r, st) in &self.population.rows {
            let _ = writeln!(
                s,
                "{r:>6} {:>9.2} {:>7} {:>9.2} {:>7} {:>7} {:>9.2} {:>9.2}",
                st.mean, st.mode, st.median, st.min, st.max, st.ci_low, st.ci_high
            );
        }
        s
    }
}

/// Runs every layer in order, simulating first when a scenario is configured.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let mut steps = Vec::new();
    if cfg.scenario.is_some() {
        steps.push(cmd_simulate(cfg)?);
    }
    steps.push(cmd_geolocate(cfg)?);
    steps.push(cmd_dedup(cfg)?);
    steps.push(cmd_aggregate(cfg)?);
    steps.push(cmd_infer(cfg)?);
    let population = io::read_stats(cfg.inference_dir().join(outputs::POPULATION_STATS))?;
    Ok(PipelineReport { steps, population })
}
