//! Acceptance run: one PASS/FAIL line per criterion on standard error.
//!
//! Runs without the test harness so the lines appear whether or not
//! anything fails; the process exits non-zero if any criterion fails.
//! Criteria 6 and 7 run the default experiment twice (a few minutes).

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic;
use std::path::Path;
use std::time::{Duration, Instant};

use cnlm_cli::pipeline::{run_pipeline, PipelineConfig, Report};
use common::checks;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report_line(id: usize, title: &str, elapsed: Duration, limit: Duration, outcome: &Outcome) -> bool {
    let pass = outcome.pass && elapsed <= limit;
    let mut detail = outcome.detail.clone();
    if elapsed > limit {
        detail = format!("over the time limit; {detail}");
    }
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {id}: {} - {title} ({:.1}s of {}s){}{}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if detail.is_empty() { "" } else { ": " },
        detail
    );
    pass
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

/// Runs property checks, stopping at the first failure.
fn property(checks: &[(&str, fn())]) -> Outcome {
    for (name, check) in checks {
        if let Err(e) = panic::catch_unwind(check) {
            return Outcome {
                pass: false,
                detail: format!("{name}: {}", panic_message(e)),
            };
        }
    }
    Outcome {
        pass: true,
        detail: String::new(),
    }
}

fn trends(report: &Report) -> Outcome {
    let get = |model: &str, n: usize| report.get(model, n).unwrap_or(f64::NAN);
    let mut parts = Vec::new();
    let mut pass = true;
    let mut check = |ok: bool, text: String| {
        pass &= ok;
        parts.push(format!("{} {text}", if ok { "ok" } else { "NOT" }));
    };
    let (one, fifty) = (get("ngram-nbest", 1), get("ngram-nbest", 50));
    check(fifty < one, format!("n-gram N=50 {fifty:.2} < N=1 {one:.2}"));
    for n in [10, 20, 50] {
        let (cn, nb) = (get("ngram-cn", n), get("ngram-nbest", n));
        check(cn <= nb, format!("N={n} cn {cn:.2} <= nbest {nb:.2}"));
    }
    let (cn, both) = (get("rnn-cn", 20), get("rnn-cn+nbest", 20));
    check(both < cn, format!("rnn N=20 cn+nbest {both:.2} < cn {cn:.2}"));
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("listing run directory") {
            let path = entry.expect("listing run directory").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.insert(rel, fs::read(&path).expect("reading artifact"));
            }
        }
    }
    files
}

fn identical_runs(a: &Path, b: &Path) -> Outcome {
    let (fa, fb) = (read_tree(a), read_tree(b));
    let differing: Vec<&String> = fa
        .keys()
        .chain(fb.keys().filter(|k| !fa.contains_key(*k)))
        .filter(|k| fa.get(*k) != fb.get(*k))
        .collect();
    let kinds = ["nbest.txt", "cn.", ".arpa", "report.txt"];
    let covered = kinds.iter().all(|k| fa.keys().any(|f| f.contains(k)));
    Outcome {
        pass: differing.is_empty() && covered,
        detail: if !covered {
            "expected artifacts missing".into()
        } else if differing.is_empty() {
            format!("{} files byte-identical", fa.len())
        } else {
            format!("differing: {differing:?}")
        },
    }
}

fn pipeline(dir: &Path) -> Result<Report, String> {
    let cfg = PipelineConfig {
        work_dir: dir.to_path_buf(),
        ..PipelineConfig::default()
    };
    run_pipeline(&cfg).map_err(|e| format!("{e:#}"))
}

fn failed(detail: String) -> Outcome {
    Outcome { pass: false, detail }
}

fn main() {
    let secs = Duration::from_secs;
    let quiet = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));

    let mut all = true;
    let mut timed = |id: usize, title: &str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        all &= report_line(id, title, start.elapsed(), limit, &outcome);
    };

    timed(1, "degenerate Kneser-Ney oracles", secs(5), &mut || {
        property(&[
            ("chain networks", checks::chain_networks_give_the_text_model),
            ("textbook model", checks::integer_count_model_matches_textbook_kneser_ney),
        ])
    });
    timed(2, "Poisson-binomial DP against enumeration", secs(10), &mut || {
        property(&[("enumeration", checks::poisson_binomial_matches_enumeration)])
    });
    timed(3, "confusion network validity suite", secs(30), &mut || {
        property(&[("500 lists", checks::networks_from_random_lists_are_valid_and_contain_every_hypothesis)])
    });
    timed(4, "gradient checks", secs(60), &mut || {
        property(&[("central differences", checks::gradients_match_finite_differences)])
    });
    timed(5, "decoder oracles", secs(10), &mut || {
        property(&[
            ("beam vs enumeration and greedy", checks::wide_beam_is_exhaustive_and_narrow_beam_is_greedy),
            ("one-group diverse search", checks::single_group_diverse_search_is_beam_search),
        ])
    });

    let root = tempfile::TempDir::new().expect("temporary directory");
    let (first, second) = (root.path().join("first"), root.path().join("second"));
    timed(6, "perplexity trends on the default experiment", secs(15 * 60), &mut || {
        match pipeline(&first) {
            Ok(report) => trends(&report),
            Err(e) => failed(e),
        }
    });
    timed(7, "determinism of two full runs", secs(15 * 60), &mut || {
        if !first.join("report.txt").exists() {
            return failed("first run did not complete".into());
        }
        match pipeline(&second) {
            Ok(_) => identical_runs(&first, &second),
            Err(e) => failed(e),
        }
    });

    timed(8, "perplexity sanity", secs(10), &mut || {
        property(&[
            ("uniform models", checks::uniform_models_have_vocabulary_size_perplexity),
            ("recomputation", checks::perplexities_agree_with_direct_recomputation),
        ])
    });

    panic::set_hook(quiet);
    if !all {
        std::process::exit(1);
    }
}
