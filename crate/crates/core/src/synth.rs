//! Seeded synthetic cohorts shaped like common clinical tables, for demos,
//! smoke runs and tests.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Blood-panel style wide table: `PATIENT_ID,RE_DATE,outcome,<8 labs>`,
/// several irregular draws per patient, 20% missing cells, occasional
/// gross outliers. Roughly 46% of patients have outcome 1, and four labs
/// shift with the outcome.
pub fn covid_like_csv(n_patients: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (name, mean if outcome 0, mean if outcome 1, spread)
    let labs = [
        ("lymphocyte_pct", 28.0, 9.0, 7.0),
        ("ldh", 220.0, 520.0, 70.0),
        ("hs_crp", 12.0, 95.0, 25.0),
        ("neutrophil_pct", 62.0, 86.0, 7.0),
        ("albumin", 38.0, 31.0, 4.0),
        ("platelets", 230.0, 190.0, 60.0),
        ("glucose", 6.5, 7.5, 2.0),
        ("sodium", 139.0, 138.0, 3.5),
    ];
    let mut out = String::from("PATIENT_ID,RE_DATE,outcome");
    for (name, ..) in &labs {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    let start = NaiveDate::from_ymd_opt(2020, 1, 10).and_then(|d| d.and_hms_opt(0, 0, 0)).unwrap_or_default();
    for p in 0..n_patients {
        let outcome = usize::from(rng.gen_bool(0.46));
        // patient-level offset keeps repeated draws correlated
        let offsets: Vec<f64> = labs.iter().map(|l| Normal::new(0.0, l.3 * 0.5).unwrap().sample(&mut rng)).collect();
        let draws = rng.gen_range(1..=8);
        let admit = start + Duration::minutes(rng.gen_range(0..60 * 24 * 40));
        let mut t = admit;
        for _ in 0..draws {
            let _ = write!(out, "{},{},{}", p + 1, t.format("%Y-%m-%d %H:%M:%S"), outcome);
            for (k, (_, m0, m1, sd)) in labs.iter().enumerate() {
                if rng.gen_bool(0.2) {
                    out.push(',');
                    continue;
                }
                let centre = if outcome == 1 { *m1 } else { *m0 };
                let mut v = centre + offsets[k] + Normal::new(0.0, sd * 0.6).unwrap().sample(&mut rng);
                if rng.gen_bool(0.01) {
                    v *= 8.0;
                }
                let _ = write!(out, ",{:.2}", v.max(0.0));
            }
            out.push('\n');
            t += Duration::minutes(rng.gen_range(30..60 * 36));
        }
    }
    out
}

/// Vital-sign sequences, one pipe-delimited file per patient with an
/// hourly `ICULOS` clock and a per-hour `SepsisLabel`. About 15% of patients
/// turn septic, with label 1 over their last five recorded hours and
/// drifting vitals before onset; the rest stay negative.
pub fn write_sepsis_like_dir(dir: &Path, n_patients: usize, seed: u64) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vitals = [("HR", 82.0, 12.0), ("O2Sat", 97.0, 2.0), ("Temp", 36.9, 0.5), ("SBP", 122.0, 15.0), ("Resp", 18.0, 3.0)];
    let noise = Normal::new(0.0, 1.0).unwrap();
    for p in 0..n_patients {
        let septic = rng.gen_bool(0.15);
        let len: usize = if septic { rng.gen_range(12..=30) } else { rng.gen_range(8..=60) };
        let onset = len.saturating_sub(5);
        let mut text = String::from("HR|O2Sat|Temp|SBP|Resp|Age|ICULOS|SepsisLabel\n");
        let age = rng.gen_range(20..90);
        for hour in 0..len {
            let drift = if septic { (hour as f64 - onset as f64 + 6.0).max(0.0) / 6.0 } else { 0.0 };
            for (k, (_, mean, sd)) in vitals.iter().enumerate() {
                if rng.gen_bool(0.3) {
                    text.push('|');
                    continue;
                }
                let push = match k {
                    0 => 18.0 * drift,
                    1 => -3.0 * drift,
                    2 => 1.2 * drift,
                    3 => -20.0 * drift,
                    _ => 6.0 * drift,
                };
                let _ = write!(text, "{:.1}|", mean + push + sd * 0.5 * noise.sample(&mut rng));
            }
            let label = u8::from(septic && hour >= onset);
            let _ = writeln!(text, "{age}|{}|{label}", hour + 1);
        }
        fs::write(dir.join(format!("p{:06}.psv", p + 1)), text)?;
    }
    Ok(())
}

/// Follow-up table for survival runs: `id,day,event,<3 markers>`. Hazard
/// grows with `marker_a` and falls with `marker_b`; `marker_c` is noise.
/// The last recorded day is the event or censoring time.
pub fn survival_like_csv(n_subjects: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut out = String::from("id,day,event,marker_a,marker_b,marker_c\n");
    for s in 0..n_subjects {
        let (a, b, c): (f64, f64, f64) = (noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        let hazard = 0.02 * (0.8 * a - 0.5 * b).exp();
        let event_time = -rng.gen::<f64>().ln() / hazard;
        let censor = rng.gen_range(20.0..120.0);
        let (end, event) = if event_time < censor { (event_time, 1) } else { (censor, 0) };
        let end = end.max(1.0).round() as i64;
        let visits = rng.gen_range(2..6).min(end as usize + 1);
        let mut days: Vec<i64> = (0..visits).map(|_| rng.gen_range(0..end)).collect();
        days[0] = 0;
        days.push(end);
        days.sort_unstable();
        days.dedup();
        for d in days {
            let jitter = |rng: &mut ChaCha8Rng| 0.2 * noise.sample(rng);
            let _ = writeln!(
                out,
                "s{},{d},{event},{:.3},{:.3},{:.3}",
                s + 1,
                a + jitter(&mut rng),
                b + jitter(&mut rng),
                c + jitter(&mut rng)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        assert_eq!(covid_like_csv(20, 1), covid_like_csv(20, 1));
        assert_ne!(covid_like_csv(20, 1), covid_like_csv(20, 2));
        assert_eq!(survival_like_csv(10, 3), survival_like_csv(10, 3));
    }

    #[test]
    fn covid_rows_have_every_column() {
        let text = covid_like_csv(30, 5);
        let width = text.lines().next().unwrap().split(',').count();
        assert!(text.lines().all(|l| l.split(',').count() == width));
    }

    #[test]
    fn sepsis_files_written() {
        let dir = tempfile::tempdir().unwrap();
        write_sepsis_like_dir(dir.path(), 5, 9).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 5);
        let body = fs::read_to_string(dir.path().join("p000001.psv")).unwrap();
        assert!(body.lines().skip(1).all(|l| l.split('|').count() == 8));
    }
}
