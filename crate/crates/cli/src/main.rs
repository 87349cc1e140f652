use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use aqf_core::{merge, AdaptiveFilter, Error, FilterConfig, Policy, YesNoFilter};
use aqf_workbench::report::save_csv;
use aqf_workbench::workload::{parse_count, read_keys};
use aqf_workbench::{
    run_adaptation_trace, run_adversary, run_churn, AdversaryConfig, ChurnConfig, Dist, Prefilled, ProbeConfig,
    TraceConfig, TraceRow,
};
use clap::{Args, Parser, Subcommand};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Parser)]
#[command(name = "aqf", version, about = "Adaptive quotient filter workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fill a filter and report its space usage.
    Build {
        #[command(flatten)]
        filter: FilterArgs,
        /// Write the filter snapshot here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adapting query trace with frozen-filter FPR checkpoints.
    Trace {
        #[command(flatten)]
        filter: FilterArgs,
        #[command(flatten)]
        trace: TraceArgs,
    },
    /// Adapting query trace with periodic delete-and-replace events.
    Churn {
        #[command(flatten)]
        filter: FilterArgs,
        #[command(flatten)]
        trace: TraceArgs,
        /// Churn every this percent of the queries.
        #[arg(long, default_value_t = 10.0)]
        interval_pct: f64,
        /// Fraction of live items replaced per churn event.
        #[arg(long, default_value_t = 0.2)]
        replace_pct: f64,
    },
    /// Replay collected false positives against the filter.
    Adversary {
        #[command(flatten)]
        filter: FilterArgs,
        /// Benign queries during which the adversary collects false positives.
        #[arg(long, default_value = "1000000", value_parser = count)]
        warmup: u64,
        /// Attack-phase queries.
        #[arg(long, default_value = "1000000", value_parser = count)]
        count: u64,
        #[arg(long, default_value_t = 0.1)]
        adv_frac: f64,
        /// Simulated cost of each positive answer, in nanoseconds.
        #[arg(long, default_value_t = 10_000)]
        latency_ns: u64,
    },
    /// Build yes/no-list filters and report exactness and adaptivity cost.
    Yesno {
        /// YES-list size (ignored with --yes-file).
        #[arg(long, default_value = "1024", value_parser = count)]
        n: u64,
        /// NO-list size (ignored with --no-file).
        #[arg(long, default_value = "524288", value_parser = count)]
        m: u64,
        /// Target false-positive rate for keys outside both lists.
        #[arg(long, default_value_t = 1.0 / 512.0)]
        epsilon: f64,
        #[arg(long, default_value_t = aqf_core::yesno::DEFAULT_SLACK)]
        slack: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of consecutive seeds to build.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Raw little-endian u64 YES keys.
        #[arg(long)]
        yes_file: Option<PathBuf>,
        /// Raw little-endian u64 NO keys.
        #[arg(long)]
        no_file: Option<PathBuf>,
        /// Write the snapshot of the first successful build here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge two filter snapshots.
    Merge {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rough per-operation timings.
    Bench {
        #[command(flatten)]
        filter: FilterArgs,
        /// Lookups per phase.
        #[arg(long, default_value = "1000000", value_parser = count)]
        count: u64,
    },
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, default_value_t = 20)]
    qbits: u32,
    #[arg(long, default_value_t = 9)]
    rbits: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fraction of slots filled with uniform keys.
    #[arg(long, default_value_t = 0.9)]
    load: f64,
    /// Fill from raw little-endian u64 keys instead of random ones.
    #[arg(long)]
    keys_file: Option<PathBuf>,
    /// Disable adaptation on lookups.
    #[arg(long)]
    no_adapt: bool,
}

impl FilterArgs {
    fn prefill(&self) -> anyhow::Result<Prefilled> {
        let cfg = FilterConfig::new(self.qbits, self.rbits, self.seed)?;
        let policy = Policy {
            auto_adapt: !self.no_adapt,
            ..Policy::default()
        };
        match &self.keys_file {
            Some(path) => Prefilled::from_keys(cfg, policy, read_keys(path)?),
            None => Prefilled::uniform(cfg, policy, self.load, self.seed.wrapping_add(0x5151)),
        }
    }
}

#[derive(Args)]
struct TraceArgs {
    /// Adapting queries to run.
    #[arg(long, default_value = "3000000", value_parser = count)]
    count: u64,
    /// `uniform` or `zipf:S:U`.
    #[arg(long, default_value = "zipf:1.5:10000000")]
    dist: Dist,
    #[arg(long, default_value_t = 20)]
    probe_sets: usize,
    #[arg(long, default_value = "100000", value_parser = count)]
    probe_size: u64,
    /// Checkpoint every this percent of the queries.
    #[arg(long, default_value_t = 10.0)]
    measure_every: f64,
    /// Write trace rows here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl TraceArgs {
    fn config(&self, seed: u64) -> TraceConfig {
        TraceConfig {
            dist: self.dist,
            queries: self.count,
            measure_every_pct: self.measure_every,
            probe: ProbeConfig {
                sets: self.probe_sets,
                size: self.probe_size as usize,
            },
            universe_seed: seed,
            seed: seed.wrapping_add(0x7ace),
        }
    }

    fn emit(&self, meta: &str, rows: &[TraceRow]) -> anyhow::Result<()> {
        match &self.csv {
            Some(path) => save_csv(path, meta, rows),
            None => aqf_workbench::report::write_csv(std::io::stdout().lock(), meta, rows),
        }
    }
}

fn count(s: &str) -> Result<u64, String> {
    parse_count(s).map_err(|e| e.to_string())
}

fn print_space(f: &AdaptiveFilter) {
    let rep = f.space_report();
    println!("qbits={} rbits={} seed={}", f.config().qbits, f.config().rbits, f.config().seed);
    println!("items={} load_factor={:.4}", rep.items, rep.load_factor);
    println!(
        "total_bits={} bits_per_item={:.3} extension_slots={} counter_slots={}",
        rep.total_bits, rep.bits_per_item, rep.extension_slots, rep.counter_slots
    );
}

fn trace_meta(kind: &str, f: &FilterArgs, t: &TraceArgs) -> String {
    format!(
        "{kind} qbits={} rbits={} seed={} load={} dist={} count={} probe_sets={} probe_size={} adapt={}",
        f.qbits, f.rbits, f.seed, f.load, t.dist, t.count, t.probe_sets, t.probe_size, !f.no_adapt
    )
}

fn yes_no_lists(n: u64, m: u64, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity((n + m) as usize);
    let mut draw = |count: u64| {
        let mut out = Vec::with_capacity(count as usize);
        while (out.len() as u64) < count {
            let k: u64 = rng.random();
            if seen.insert(k) {
                out.push(k);
            }
        }
        out
    };
    let yes = draw(n);
    let no = draw(m);
    (yes, no)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Build { filter, out } => {
            let p = filter.prefill()?;
            print_space(&p.filter);
            if let Some(path) = out {
                p.filter.save(&path).with_context(|| format!("writing {}", path.display()))?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::Trace { filter, trace } => {
            let mut p = filter.prefill()?;
            let rows = run_adaptation_trace(&mut p, &trace.config(filter.seed))?;
            trace.emit(&trace_meta("trace", &filter, &trace), &rows)?;
        }
        Cmd::Churn {
            filter,
            trace,
            interval_pct,
            replace_pct,
        } => {
            let mut p = filter.prefill()?;
            let churn = ChurnConfig {
                interval_pct,
                replace_pct,
                seed: filter.seed.wrapping_add(0xc4),
            };
            let rows = run_churn(&mut p, &trace.config(filter.seed), &churn)?;
            let meta = format!(
                "{} interval_pct={interval_pct} replace_pct={replace_pct}",
                trace_meta("churn", &filter, &trace)
            );
            trace.emit(&meta, &rows)?;
        }
        Cmd::Adversary {
            filter,
            warmup,
            count,
            adv_frac,
            latency_ns,
        } => {
            let mut p = filter.prefill()?;
            let rep = run_adversary(
                &mut p,
                &AdversaryConfig {
                    warmup,
                    attack: count,
                    adv_frac,
                    latency_nanos: latency_ns,
                    seed: filter.seed.wrapping_add(0xadd),
                },
            )?;
            println!("adapt={} adv_frac={adv_frac}", !filter.no_adapt);
            println!("warmup_false_positives={} pool={}", rep.warmup_false_positives, rep.pool);
            println!(
                "attack_queries={} adversarial_queries={} attack_false_positives={} fp_rate={:.6}",
                rep.attack_queries,
                rep.adversarial_queries,
                rep.attack_false_positives,
                rep.fp_rate()
            );
            println!(
                "positives={} simulated_nanos={} effective_qps={:.0}",
                rep.positives, rep.simulated_nanos, rep.effective_qps
            );
            if rep.degenerate {
                println!("note: no false positives collected; the attack phase was benign");
            }
        }
        Cmd::Yesno {
            n,
            m,
            epsilon,
            slack,
            seed,
            seeds,
            yes_file,
            no_file,
            out,
        } => {
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let mut ok = 0u64;
            let mut bits = 0u64;
            let mut out = out;
            for s in seed..seed + seeds {
                let (mut yes, mut no) = yes_no_lists(n, m, s);
                if let Some(path) = &yes_file {
                    yes = read_keys(path)?;
                }
                if let Some(path) = &no_file {
                    no = read_keys(path)?;
                }
                match YesNoFilter::build_static(&yes, &no, epsilon, slack, s) {
                    Ok((f, rep)) => {
                        let errors = yes.iter().filter(|&&y| !f.query(y)).count()
                            + no.iter().filter(|&&z| f.query(z)).count();
                        println!(
                            "seed={s} ok qbits={} rbits={} adaptivity_bits={} physical_bits={} budget_bits={} soft_collisions={} errors={errors}",
                            f.config().qbits,
                            f.config().rbits,
                            rep.adaptivity_bits,
                            rep.physical_bits,
                            rep.budget_bits,
                            rep.soft_collisions
                        );
                        ok += 1;
                        bits += rep.adaptivity_bits;
                        if let Some(path) = out.take() {
                            std::fs::write(&path, f.to_bytes())
                                .with_context(|| format!("writing {}", path.display()))?;
                        }
                    }
                    Err(e @ Error::ConstructionFailed { .. }) if seeds > 1 => println!("seed={s} failed: {e}"),
                    Err(e) => return Err(e.into()),
                }
            }
            if seeds > 1 {
                let mean = if ok > 0 { bits as f64 / ok as f64 } else { 0.0 };
                println!("successes={ok}/{seeds} mean_adaptivity_bits={mean:.1}");
            }
        }
        Cmd::Merge { a, b, out } => {
            let fa = AdaptiveFilter::load(&a).with_context(|| format!("reading {}", a.display()))?;
            let fb = AdaptiveFilter::load(&b).with_context(|| format!("reading {}", b.display()))?;
            let m = merge(&fa, &fb)?;
            m.save(&out).with_context(|| format!("writing {}", out.display()))?;
            print_space(&m);
            println!("wrote {}", out.display());
        }
        Cmd::Bench { filter, count } => {
            let t = Instant::now();
            let mut p = filter.prefill()?;
            let n = p.keys.len().max(1);
            println!("fill: {} keys, {:.1} ns/key", p.keys.len(), t.elapsed().as_nanos() as f64 / n as f64);
            let t = Instant::now();
            let mut hits = 0u64;
            for i in 0..count {
                hits += p.filter.may_contain(p.keys[(i % n as u64) as usize]) as u64;
            }
            println!("positive may_contain: {:.1} ns/op ({hits} hits)", t.elapsed().as_nanos() as f64 / count.max(1) as f64);
            let mut rng = StdRng::seed_from_u64(filter.seed ^ 0xbe);
            let t = Instant::now();
            let mut fps = 0u64;
            for _ in 0..count {
                fps += p.filter.lookup(rng.random())?.is_false_positive() as u64;
            }
            println!("random lookup: {:.1} ns/op ({fps} false positives)", t.elapsed().as_nanos() as f64 / count.max(1) as f64);
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::ConstructionFailed { .. } | Error::FilterFull { .. } | Error::AdaptationExhausted(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
