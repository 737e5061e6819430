//! The built-in benchmark suite: three medical queries, two account-data
//! queries, and the three micro-benchmark queries exercising one
//! optimization each. Every entry carries its SQL and a seeded dataset
//! generator at a requested scale.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// (table name -> (columns, rows)) in plaintext, pre-encoding.
pub type PlainDb = BTreeMap<String, (Vec<String>, Vec<Vec<u64>>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bench {
    Comorbidity,
    RecurrentCdiff,
    AspirinCount,
    PasswordReuse,
    CreditScore,
    Q1,
    Q2,
    Q3,
}

impl Bench {
    pub fn all() -> [Bench; 8] {
        [
            Bench::Comorbidity,
            Bench::RecurrentCdiff,
            Bench::AspirinCount,
            Bench::PasswordReuse,
            Bench::CreditScore,
            Bench::Q1,
            Bench::Q2,
            Bench::Q3,
        ]
    }

    pub fn by_suite(suite: &str) -> Vec<Bench> {
        match suite {
            "medical" => vec![Bench::Comorbidity, Bench::RecurrentCdiff, Bench::AspirinCount],
            "accounts" => vec![Bench::PasswordReuse, Bench::CreditScore],
            "micro" => vec![Bench::Q1, Bench::Q2, Bench::Q3],
            _ => Bench::all().to_vec(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Bench::Comorbidity => "comorbidity",
            Bench::RecurrentCdiff => "recurrent-cdiff",
            Bench::AspirinCount => "aspirin-count",
            Bench::PasswordReuse => "password-reuse",
            Bench::CreditScore => "credit-score",
            Bench::Q1 => "q1",
            Bench::Q2 => "q2",
            Bench::Q3 => "q3",
        }
    }

    pub fn from_name(name: &str) -> Option<Bench> {
        Bench::all().into_iter().find(|b| b.name() == name)
    }

    pub fn sql(&self) -> &'static str {
        match self {
            Bench::Comorbidity => {
                "SELECT diag, COUNT(*) cnt FROM diagnosis WHERE pid IN cdiff_cohort \
                 GROUP BY diag ORDER BY cnt DESC LIMIT 10"
            }
            Bench::RecurrentCdiff => {
                "WITH rcd AS (SELECT pid, time, row_no() OVER (PARTITION BY pid ORDER BY time) \
                 FROM diagnosis WHERE diag = 'cdiff') \
                 SELECT DISTINCT pid FROM rcd r1 JOIN rcd r2 ON r1.pid = r2.pid \
                 WHERE r2.time - r1.time >= 15 DAYS AND r2.time - r1.time <= 56 DAYS \
                 AND r2.row_no = r1.row_no + 1"
            }
            Bench::AspirinCount => {
                "SELECT COUNT(DISTINCT d.pid) FROM diagnosis AS d JOIN medication AS m \
                 ON d.pid = m.pid WHERE d.diag = 'hd' AND m.med = 'aspirin' AND d.time <= m.time"
            }
            Bench::PasswordReuse => {
                "SELECT ID FROM accounts GROUP BY CONCAT(ID, PWD) HAVING COUNT(*) > 1"
            }
            Bench::CreditScore => {
                "SELECT S.ID FROM (SELECT ID, MIN(CS) AS cs1, MAX(CS) AS cs2 FROM scores \
                 WHERE year = 2019 GROUP BY ID) AS S WHERE S.cs2 - S.cs1 > 100"
            }
            Bench::Q1 => "SELECT DISTINCT r.id FROM r JOIN s ON r.id = s.id",
            Bench::Q2 => "SELECT r.k, COUNT(*) FROM r JOIN s ON r.id = s.id GROUP BY r.k",
            Bench::Q3 => "SELECT DISTINCT id FROM r WHERE k = 7",
        }
    }

    /// Seeded random dataset at scale `n` (rows of the main relation).
    pub fn dataset(&self, n: usize, seed: u64) -> PlainDb {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut db = PlainDb::new();
        let day0 = crate::values::parse_date("2012-01-01").unwrap() as u64;
        match self {
            Bench::Comorbidity => {
                let diags: Vec<u64> = (0..6).map(|i| crate::values::hash_string(&format!("d{i}"))).collect();
                let rows: Vec<Vec<u64>> = (0..n)
                    .map(|_| {
                        vec![
                            rng.gen_range(0..(n as u64 / 2).max(2)),
                            day0 + rng.gen_range(0..365),
                            diags[rng.gen_range(0..diags.len())],
                        ]
                    })
                    .collect();
                let cohort: Vec<Vec<u64>> = (0..(n / 4).max(1))
                    .map(|_| vec![rng.gen_range(0..(n as u64 / 2).max(2))])
                    .collect();
                db.insert(
                    "diagnosis".into(),
                    (vec!["pid".into(), "time".into(), "diag".into()], rows),
                );
                db.insert("cdiff_cohort".into(), (vec!["pid".into()], cohort));
            }
            Bench::RecurrentCdiff => {
                let cdiff = crate::values::hash_string("cdiff");
                let other = crate::values::hash_string("flu");
                let rows: Vec<Vec<u64>> = (0..n)
                    .map(|_| {
                        vec![
                            rng.gen_range(0..(n as u64 / 4).max(2)),
                            day0 + rng.gen_range(0..200),
                            if rng.gen_bool(0.7) { cdiff } else { other },
                        ]
                    })
                    .collect();
                db.insert(
                    "diagnosis".into(),
                    (vec!["pid".into(), "time".into(), "diag".into()], rows),
                );
            }
            Bench::AspirinCount => {
                let hd = crate::values::hash_string("hd");
                let flu = crate::values::hash_string("flu");
                let aspirin = crate::values::hash_string("aspirin");
                let statin = crate::values::hash_string("statin");
                let pids = (n as u64 / 2).max(2);
                let diag: Vec<Vec<u64>> = (0..n)
                    .map(|_| {
                        vec![
                            rng.gen_range(0..pids),
                            day0 + rng.gen_range(0..100),
                            if rng.gen_bool(0.5) { hd } else { flu },
                        ]
                    })
                    .collect();
                let med: Vec<Vec<u64>> = (0..n)
                    .map(|_| {
                        vec![
                            rng.gen_range(0..pids),
                            day0 + rng.gen_range(0..100),
                            if rng.gen_bool(0.5) { aspirin } else { statin },
                        ]
                    })
                    .collect();
                db.insert(
                    "diagnosis".into(),
                    (vec!["pid".into(), "time".into(), "diag".into()], diag),
                );
                db.insert(
                    "medication".into(),
                    (vec!["pid".into(), "time".into(), "med".into()], med),
                );
            }
            Bench::PasswordReuse => {
                let rows: Vec<Vec<u64>> = (0..n)
                    .map(|_| {
                        vec![
                            rng.gen_range(0..(n as u64 / 3).max(2)),
                            rng.gen_range(0..4),
                        ]
                    })
                    .collect();
                db.insert("accounts".into(), (vec!["ID".into(), "PWD".into()], rows));
            }
            Bench::CreditScore => {
                let rows: Vec<Vec<u64>> = (0..n)
                    .map(|_| {
                        vec![
                            rng.gen_range(0..(n as u64 / 3).max(2)),
                            300 + rng.gen_range(0..550),
                            2018 + rng.gen_range(0..3),
                        ]
                    })
                    .collect();
                db.insert(
                    "scores".into(),
                    (vec!["ID".into(), "CS".into(), "year".into()], rows),
                );
            }
            Bench::Q1 => {
                let dom = (n as u64).max(2);
                let r: Vec<Vec<u64>> = (0..n).map(|_| vec![rng.gen_range(0..dom)]).collect();
                let s: Vec<Vec<u64>> = (0..n).map(|_| vec![rng.gen_range(0..dom)]).collect();
                db.insert("r".into(), (vec!["id".into()], r));
                db.insert("s".into(), (vec!["id".into()], s));
            }
            Bench::Q2 => {
                let dom = (n as u64 / 2).max(2);
                let r: Vec<Vec<u64>> = (0..n)
                    .map(|_| vec![rng.gen_range(0..dom), rng.gen_range(0..4)])
                    .collect();
                let s: Vec<Vec<u64>> = (0..n).map(|_| vec![rng.gen_range(0..dom)]).collect();
                db.insert("r".into(), (vec!["id".into(), "k".into()], r));
                db.insert("s".into(), (vec!["id".into()], s));
            }
            Bench::Q3 => {
                let rows: Vec<Vec<u64>> = (0..n)
                    .map(|_| vec![rng.gen_range(0..(n as u64 / 2).max(2)), rng.gen_range(0..14)])
                    .collect();
                db.insert("r".into(), (vec!["id".into(), "k".into()], rows));
            }
        }
        db
    }
}
