#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigUint;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        if name == "__pycache__" {
            continue;
        }
        let target = to.join(&name);
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// A private copy of a fixture project, so runs never write into the source
/// tree and can proceed in parallel.
pub fn project_copy(name: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&fixture(name), dir.path());
    dir
}

/// Ochiai as an exact decimal: floor(ef / sqrt((ef+nf)(ef+ep)) · 10^30),
/// obtained as the integer square root of ef² · 10^60 / D.
pub fn ochiai_scaled(ef: u64, ep: u64, nf: u64, np: u64) -> BigUint {
    let _ = np;
    let d = BigUint::from((ef + nf) * (ef + ep));
    if ef == 0 || d == BigUint::from(0u32) {
        return BigUint::from(0u32);
    }
    let num = BigUint::from(ef * ef) * BigUint::from(10u32).pow(60);
    (num / d).sqrt()
}

pub fn scaled_to_f64(v: &BigUint) -> f64 {
    let digits = format!("{v:0>31}");
    let (int, frac) = digits.split_at(digits.len() - 30);
    format!("{int}.{frac}").parse().unwrap()
}

/// Independent Ochiai reference, accurate to well below 1e-15.
pub fn ochiai_oracle(ef: u64, ep: u64, nf: u64, np: u64) -> f64 {
    scaled_to_f64(&ochiai_scaled(ef, ep, nf, np))
}

/// One test of a brute-force scenario: whether it fails, and the lines of a
/// single file it covers.
pub type Scenario = Vec<(bool, BTreeSet<u32>)>;

/// Ranks every covered line by direct counting and the oracle: positive
/// scores only, highest first, ties by line.
pub fn brute_force_rank(tests: &Scenario) -> Vec<(u32, f64, [u64; 4])> {
    let lines: BTreeSet<u32> = tests.iter().flat_map(|(_, ls)| ls.iter().copied()).collect();
    let mut rows: Vec<(u32, BigUint, [u64; 4])> = Vec::new();
    for line in lines {
        let mut counts = [0u64; 4];
        for (failing, covered) in tests {
            let idx = match (covered.contains(&line), *failing) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            counts[idx] += 1;
        }
        let [ef, ep, nf, np] = counts;
        let exact = ochiai_scaled(ef, ep, nf, np);
        if exact > BigUint::from(0u32) {
            rows.push((line, exact, counts));
        }
    }
    rows.sort_by(|a, b| match b.1.cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    rows.into_iter()
        .map(|(line, exact, counts)| (line, scaled_to_f64(&exact), counts))
        .collect()
}

/// Covered lines per test and file, for comparing against documented sets.
pub type CoverageSets = BTreeMap<String, BTreeMap<String, Vec<u32>>>;

pub fn load_expected(path: &Path) -> CoverageSets {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}
