//! Subcommand implementations: instance resolution, family dispatch, and the
//! report formats.

use std::fmt::Write as _;
use std::path::PathBuf;

use ppsched::autosched::{
    grid_search, memory_sweep, warmup_bound_analysis, HeuristicParams, SearchInput,
};
use ppsched::core::{MemoryModel, Profile, Schedule, TimeUs};
use ppsched::handcrafted::{build_1f1b, build_interleaved_1f1b, build_zb_h1, build_zb_h2};
use ppsched::sim::{memory_trace, simulate, MemoryTrace, SimResult};
use ppsched::zbv::{build_zbv, shift_w_tail};

use crate::files::{
    model_by_name, normalized_memory, write_out, LimitSpec, ModelSpec, ProfileFile, ScheduleFile,
};
use crate::svg;
use crate::{BuildArgs, CliError, CompareArgs, RenderArgs, SweepArgs, TimesArgs};

// ── Instance resolution ─────────────────────────────────────────────────

/// A fully resolved problem instance.
struct Instance {
    stages: u32,
    microbatches: u32,
    /// Full-stage pass times (split per chunk before simulating a chunked
    /// layout), except in the normalized regime where the unit is already
    /// one chunk pass.
    profile: Profile,
    /// Activation accounting, no limit attached.
    memory: MemoryModel,
    /// Model behind the profile, when recognized.
    model: Option<ModelSpec>,
    /// Times are per chunk pass (normalized regime): never split them.
    per_chunk_times: bool,
}

impl Instance {
    /// Times the given layout actually runs under.
    fn run_profile(&self, chunks: u32) -> Profile {
        if self.per_chunk_times || chunks <= 1 {
            self.profile
        } else {
            self.profile.split(i64::from(chunks))
        }
    }

    fn from_profile(file: &ProfileFile) -> Result<Instance, CliError> {
        let model = model_by_name(&file.model);
        let memory = match model {
            Some(spec) => spec.memory()?,
            None => normalized_memory().unlimited(),
        };
        Ok(Instance {
            stages: file.p,
            microbatches: file.m,
            profile: file.profile()?,
            memory,
            model,
            per_chunk_times: false,
        })
    }
}

fn resolve_instance(
    times: &TimesArgs,
    stages: Option<u32>,
    microbatches: Option<u32>,
) -> Result<Instance, CliError> {
    let inline = times.t_f.is_some() || times.t_b.is_some() || times.t_w.is_some();
    let sources = usize::from(times.profile.is_some())
        + usize::from(times.unit_times)
        + usize::from(inline);
    if sources == 0 {
        return Err(CliError::Usage(
            "no pass times: give --profile, --unit-times, or --t-f/--t-b/--t-w".into(),
        ));
    }
    if sources > 1 {
        return Err(CliError::Usage(
            "conflicting pass times: --profile, --unit-times, and inline times are exclusive".into(),
        ));
    }

    if let Some(path) = &times.profile {
        if times.t_comm.is_some() {
            return Err(CliError::Usage("--t-comm conflicts with --profile".into()));
        }
        let file = ProfileFile::load(path)?;
        let mut inst = Instance::from_profile(&file)?;
        if let Some(p) = stages {
            inst.stages = p;
        }
        if let Some(m) = microbatches {
            inst.microbatches = m;
        }
        return Ok(inst);
    }

    let (p, m) = match (stages, microbatches) {
        (Some(p), Some(m)) => (p, m),
        _ => {
            return Err(CliError::Usage(
                "-p and -m are required unless a profile file supplies them".into(),
            ))
        }
    };

    if times.unit_times {
        if times.t_comm.is_some() {
            return Err(CliError::Usage("--t-comm conflicts with --unit-times".into()));
        }
        return Ok(Instance {
            stages: p,
            microbatches: m,
            profile: Profile::uniform(TimeUs(1)),
            memory: normalized_memory(),
            model: None,
            per_chunk_times: true,
        });
    }

    let ms = |value: Option<f64>, name: &str| -> Result<TimeUs, CliError> {
        let v = value
            .ok_or_else(|| CliError::Usage(format!("inline times need --{name}")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(CliError::Usage(format!("--{name} {v} is not a valid time")));
        }
        Ok(TimeUs::from_ms(v))
    };
    Ok(Instance {
        stages: p,
        microbatches: m,
        profile: Profile::new(
            ms(times.t_f, "t-f")?,
            ms(times.t_b, "t-b")?,
            ms(times.t_w, "t-w")?,
            ms(times.t_comm.or(Some(0.0)), "t-comm")?,
        ),
        memory: normalized_memory(),
        model: None,
        per_chunk_times: false,
    })
}

// ── Family dispatch ─────────────────────────────────────────────────────

/// One buildable schedule family, as named on the command line.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
enum Family {
    OneFOneB,
    Interleaved,
    ZbH1,
    ZbH2,
    ZbV,
    /// Automatic search under a budget; `None` means the default (2pMB).
    Auto(Option<LimitSpec>),
}

fn parse_family(token: &str) -> Result<Family, CliError> {
    let t = token.trim();
    if let Some(rest) = t.strip_prefix("auto:") {
        return Ok(Family::Auto(Some(LimitSpec::parse(rest)?)));
    }
    match t {
        "1f1b" => Ok(Family::OneFOneB),
        "1f1b-i" => Ok(Family::Interleaved),
        "zb-h1" => Ok(Family::ZbH1),
        "zb-h2" => Ok(Family::ZbH2),
        "zb-v" => Ok(Family::ZbV),
        "auto" => Ok(Family::Auto(None)),
        _ => Err(CliError::Usage(format!(
            "unknown family {t:?}: expected 1f1b, 1f1b-i, zb-h1, zb-h2, zb-v, or auto[:LIMIT]"
        ))),
    }
}

/// A built schedule together with its simulated execution.
struct Built {
    schedule: Schedule,
    sim: SimResult,
    trace: MemoryTrace,
    /// Memory model the trace ran under (limit attached when one applies).
    memory: MemoryModel,
    /// Chosen heuristics, for the automatic family.
    heuristics: Option<HeuristicParams>,
}

/// Builds and simulates one family on an instance.
///
/// `limit` is the activation budget: required meaning for `auto`, the
/// shift/trace budget for `zb-v`, purely informational for the fixed
/// families. `chunks` overrides the interleaving depth.
fn build_family(
    family: Family,
    inst: &Instance,
    limit: Option<LimitSpec>,
    chunks: Option<u32>,
) -> Result<Built, CliError> {
    let p = inst.stages;
    let m = inst.microbatches;
    let computation = |e: &dyn std::fmt::Display| CliError::Computation(e.to_string());

    let (schedule, chunk_count, heuristics, memory) = match family {
        Family::OneFOneB => {
            let s = build_1f1b(p, m).map_err(|e| computation(&e))?;
            (s, 1, None, with_limit(inst, limit, p, 1))
        }
        Family::ZbH1 => {
            let s = build_zb_h1(p, m).map_err(|e| computation(&e))?;
            (s, 1, None, with_limit(inst, limit, p, 1))
        }
        Family::ZbH2 => {
            let s = build_zb_h2(p, m).map_err(|e| computation(&e))?;
            (s, 1, None, with_limit(inst, limit, p, 1))
        }
        Family::Interleaved => {
            let v = match (chunks, inst.model) {
                (Some(v), _) => v,
                (None, Some(model)) => model.chunks(p)?,
                (None, None) => {
                    return Err(CliError::Usage(
                        "interleaved layouts need --chunks when no known model supplies one".into(),
                    ))
                }
            };
            let s = build_interleaved_1f1b(p, m, v).map_err(|e| computation(&e))?;
            (s, v, None, with_limit(inst, limit, p, v))
        }
        Family::ZbV => {
            let raw = build_zbv(p, m).map_err(|e| computation(&e))?;
            // Default budget is the classic one-forward-per-stage envelope;
            // the W shift must not spend more than that.
            let spec = limit.unwrap_or(LimitSpec::PerStageForwards(1));
            let mem = MemoryModel {
                m_limit: Some(spec.resolve(p, full_stage_m_b(inst, 2))),
                ..inst.memory
            };
            let run = inst.run_profile(2);
            (shift_w_tail(&raw, &mem, &run), 2, None, mem)
        }
        Family::Auto(inline_limit) => {
            let spec = inline_limit
                .or(limit)
                .unwrap_or(LimitSpec::PerStageForwards(2));
            let mem = MemoryModel {
                m_limit: Some(spec.resolve(p, inst.memory.m_b)),
                ..inst.memory
            };
            let input = SearchInput::new(p, m, inst.profile, mem);
            let (s, params) = grid_search(&input).map_err(|e| computation(&e))?;
            (s, 1, Some(params), mem)
        }
    };

    let run_profile = inst.run_profile(chunk_count);
    let sim = simulate(&schedule, &run_profile).map_err(|e| computation(&e))?;
    let trace = memory_trace(&sim, &memory);
    Ok(Built { schedule, sim, trace, memory, heuristics })
}

/// A stage's full per-microbatch forward footprint in per-chunk trace units:
/// each of its `chunks` chunk passes charges `m_b`.
fn full_stage_m_b(inst: &Instance, chunks: u32) -> i64 {
    i64::from(chunks) * inst.memory.m_b
}

/// Attaches an informational limit to the instance's accounting, if given.
fn with_limit(inst: &Instance, limit: Option<LimitSpec>, p: u32, chunks: u32) -> MemoryModel {
    match limit {
        Some(spec) => MemoryModel {
            m_limit: Some(spec.resolve(p, full_stage_m_b(inst, chunks))),
            ..inst.memory
        },
        None => inst.memory.unlimited(),
    }
}

fn family_token(family: Family) -> String {
    match family {
        Family::OneFOneB => "1f1b".into(),
        Family::Interleaved => "1f1b-i".into(),
        Family::ZbH1 => "zb-h1".into(),
        Family::ZbH2 => "zb-h2".into(),
        Family::ZbV => "zb-v".into(),
        Family::Auto(None) => "auto".into(),
        Family::Auto(Some(spec)) => format!("auto:{spec}"),
    }
}

// ── build ───────────────────────────────────────────────────────────────

pub fn build(args: &BuildArgs) -> Result<(), CliError> {
    let family = parse_family(&args.family)?;
    let inst = resolve_instance(&args.times, args.stages, args.microbatches)?;
    let limit = args.m_limit.as_deref().map(LimitSpec::parse).transpose()?;
    let built = build_family(family, &inst, limit, args.chunks)?;

    let token = family_token(family);
    let default_name = format!(
        "{}_p{}_m{}.json",
        token.replace(':', "-"),
        inst.stages,
        inst.microbatches
    );
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(default_name));

    let mut report = String::new();
    let _ = writeln!(report, "family: {token}");
    let _ = writeln!(report, "stages: {}", inst.stages);
    let _ = writeln!(report, "microbatches: {}", inst.microbatches);
    let _ = writeln!(report, "chunks_per_stage: {}", built.schedule.topology.chunks_per_stage);
    if let Some(params) = built.heuristics {
        let _ = writeln!(
            report,
            "heuristics: extra_warmup_f={} skip_excess_f={}",
            params.extra_warmup_f, params.skip_excess_f
        );
    }
    if let Some(limit) = built.memory.m_limit {
        let _ = writeln!(report, "m_limit_units: {limit}");
    }
    let _ = writeln!(report, "cost_us: {}", built.sim.cost.as_us());
    let _ = writeln!(report, "ideal_us: {}", built.sim.ideal_stage_work.as_us());
    let _ = writeln!(report, "bubble_us: {}", built.sim.bubble.as_us());
    let _ = writeln!(report, "bubble_rate: {:.4}", built.sim.bubble_rate);
    let peaks: Vec<String> =
        built.trace.per_stage.iter().map(|s| s.peak.to_string()).collect();
    let _ = writeln!(report, "peak_units: {}", peaks.join(" "));
    if built.memory.m_limit.is_some() {
        let _ = writeln!(
            report,
            "within_limit: {}",
            if built.trace.within_limit { "yes" } else { "no" }
        );
    }

    let resolved = write_out(&out, &ScheduleFile::to_json(&built.schedule))?;
    let _ = writeln!(report, "schedule: {}", resolved.display());
    print!("{report}");
    Ok(())
}

// ── compare ─────────────────────────────────────────────────────────────

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let tokens: Vec<&str> = args
        .families
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(CliError::Usage("--families lists no family".into()));
    }
    let families: Vec<Family> =
        tokens.iter().map(|t| parse_family(t)).collect::<Result<_, _>>()?;

    let mut rows: Vec<(String, u32, u32, Vec<f64>)> = Vec::new();
    for path in &args.profiles {
        let file = ProfileFile::load(path)?;
        let inst = Instance::from_profile(&file)?;
        let mut rates = Vec::with_capacity(families.len());
        for &family in &families {
            let built = build_family(family, &inst, None, None)?;
            rates.push(built.sim.bubble_rate);
        }
        rows.push((file.model, file.p, file.m, rates));
    }

    // Text table.
    let mut table = String::new();
    let _ = write!(table, "{:<8} {:>3} {:>4}", "model", "p", "m");
    for token in &tokens {
        let _ = write!(table, " {token:>10}");
    }
    let _ = writeln!(table);
    for (model, p, m, rates) in &rows {
        let _ = write!(table, "{model:<8} {p:>3} {m:>4}");
        for rate in rates {
            let _ = write!(table, " {rate:>10.4}");
        }
        let _ = writeln!(table);
    }
    print!("{table}");

    // CSV mirror.
    let mut csv = String::from("model,p,m");
    for token in &tokens {
        let _ = write!(csv, ",{token}");
    }
    csv.push('\n');
    for (model, p, m, rates) in &rows {
        let _ = write!(csv, "{model},{p},{m}");
        for rate in rates {
            let _ = write!(csv, ",{rate:.4}");
        }
        csv.push('\n');
    }
    let written = write_out(&args.csv, &csv)?;
    println!("csv: {}", written.display());
    Ok(())
}

// ── sweep ───────────────────────────────────────────────────────────────

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let inst = resolve_instance(&args.times, args.stages, args.microbatches)?;
    let p = inst.stages;
    let m_b = inst.memory.m_b;

    let limits: Vec<i64> = match &args.limits {
        Some(list) => {
            let mut values = list
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| LimitSpec::parse(t).map(|spec| spec.resolve(p, m_b)))
                .collect::<Result<Vec<_>, _>>()?;
            if values.is_empty() {
                return Err(CliError::Usage("--limits lists no limit".into()));
            }
            values.sort_unstable();
            values.dedup();
            values
        }
        // Default: one-forward steps from the 1F1B envelope to 3x.
        None => (i64::from(p)..=3 * i64::from(p)).map(|k| k * m_b).collect(),
    };

    let input = SearchInput::new(p, inst.microbatches, inst.profile, inst.memory);
    let points =
        memory_sweep(&input, &limits).map_err(|e| CliError::Computation(e.to_string()))?;
    let bounds =
        warmup_bound_analysis(&input).map_err(|e| CliError::Computation(e.to_string()))?;

    let mut report = String::new();
    let _ = writeln!(report, "{:>14} {:>12}", "m_limit", "bubble_rate");
    for point in &points {
        let _ = writeln!(report, "{:>14} {:>12.4}", point.m_limit, point.bubble_rate);
    }
    let _ = writeln!(report, "k_star: {}", bounds.k_star);
    let _ = writeln!(report, "beta_min_us: {}", bounds.beta_min.as_us());
    let _ = writeln!(report, "plateau_limit_units: {}", bounds.m_limit_plateau);
    let _ = writeln!(report, "zero_bubble_limit_units: {}", bounds.m_limit_zero);
    print!("{report}");

    let mut csv = String::from("m_limit,bubble_rate\n");
    for point in &points {
        let _ = writeln!(csv, "{},{:.4}", point.m_limit, point.bubble_rate);
    }
    let csv_path = write_out(&args.csv, &csv)?;
    println!("csv: {}", csv_path.display());

    let curve = svg::render_sweep(&points, bounds.m_limit_plateau);
    let svg_path = write_out(&args.svg, &curve)?;
    println!("svg: {}", svg_path.display());
    Ok(())
}

// ── render ──────────────────────────────────────────────────────────────

pub fn render(args: &RenderArgs) -> Result<(), CliError> {
    let schedule = ScheduleFile::load(&args.schedule)?;
    let topo = &schedule.topology;
    let inst = resolve_instance(&args.times, Some(topo.stages), Some(topo.microbatches))?;

    let run_profile = inst.run_profile(topo.chunks_per_stage);
    let sim = simulate(&schedule, &run_profile)
        .map_err(|e| CliError::Computation(e.to_string()))?;

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.schedule.with_extension("svg"));
    let chart = svg::render_gantt(&schedule, &sim);
    let written = write_out(&out, &chart)?;
    println!("svg: {}", written.display());
    Ok(())
}
