//! Built-in structures used by tests, experiments and the bundled JSON files.

use super::{NormFamily, SubFinslerStructure};
use crate::symvf::{rat, PolyScalar, PolyVectorField};

fn field(components: Vec<PolyScalar>) -> PolyVectorField {
    PolyVectorField::new(components).expect("fixture dimensions agree")
}

fn cube(n: usize, half: f64) -> Vec<(f64, f64)> {
    vec![(-half, half); n]
}

/// `R^n` with coordinate fields and the ℓ² norm.
pub fn euclidean(n: usize) -> SubFinslerStructure {
    euclidean_with(n, NormFamily::euclidean(n))
}

pub fn euclidean_with(n: usize, norm: NormFamily) -> SubFinslerStructure {
    let fields = (0..n).map(|i| PolyVectorField::coordinate(n, i)).collect();
    SubFinslerStructure::new(fields, norm, cube(n, 8.0)).expect("valid fixture")
}

/// Heisenberg frame `X1 = ∂x − (y/2)∂z`, `X2 = ∂y + (x/2)∂z`.
pub fn heisenberg_fields() -> Vec<PolyVectorField> {
    let x = PolyScalar::var(3, 0);
    let y = PolyScalar::var(3, 1);
    let one = PolyScalar::one(3);
    let zero = PolyScalar::zero(3);
    vec![
        field(vec![one.clone(), zero.clone(), y.scale(&rat(-1, 2))]),
        field(vec![zero, one, x.scale(&rat(1, 2))]),
    ]
}

pub fn heisenberg(norm: NormFamily) -> SubFinslerStructure {
    SubFinslerStructure::new(heisenberg_fields(), norm, cube(3, 6.0)).expect("valid fixture")
}

/// Grushin plane `X1 = ∂x`, `X2 = x∂y` with the ℓ² norm.
pub fn grushin() -> SubFinslerStructure {
    let x = PolyScalar::var(2, 0);
    let fields = vec![PolyVectorField::coordinate(2, 0), field(vec![PolyScalar::zero(2), x])];
    SubFinslerStructure::new(fields, NormFamily::euclidean(2), cube(2, 6.0)).expect("valid fixture")
}

/// A polynomial perturbation of the Heisenberg frame; the raw coordinates are privileged at
/// the origin with weights (1,1,2) and the nilpotent approximation there is Heisenberg:
///
/// `X1 = (1 + y/4)∂x + (x²/8)∂y + (−y/2 + x²/6)∂z`, `X2 = ∂y + (x/2 + y²/5)∂z`.
pub fn contact_perturbed_fields() -> Vec<PolyVectorField> {
    let x = PolyScalar::var(3, 0);
    let y = PolyScalar::var(3, 1);
    let one = PolyScalar::one(3);
    let xx = &x * &x;
    let yy = &y * &y;
    vec![
        field(vec![
            &one + &y.scale(&rat(1, 4)),
            xx.scale(&rat(1, 8)),
            &y.scale(&rat(-1, 2)) + &xx.scale(&rat(1, 6)),
        ]),
        field(vec![PolyScalar::zero(3), one, &x.scale(&rat(1, 2)) + &yy.scale(&rat(1, 5))]),
    ]
}

pub fn contact_perturbed(norm: NormFamily) -> SubFinslerStructure {
    SubFinslerStructure::new(contact_perturbed_fields(), norm, cube(3, 2.0)).expect("valid fixture")
}

/// Names of the bundled fixture files and the structures they contain.
pub fn bundled() -> Vec<(&'static str, SubFinslerStructure)> {
    vec![
        ("euclidean2.json", euclidean(2)),
        ("euclidean3.json", euclidean(3)),
        ("heisenberg.json", heisenberg(NormFamily::euclidean(2))),
        ("heisenberg_linf.json", heisenberg(NormFamily::lp(2, f64::INFINITY))),
        ("heisenberg_l1.5.json", heisenberg(NormFamily::lp(2, 1.5))),
        ("grushin.json", grushin()),
        ("contact_perturbed.json", contact_perturbed(NormFamily::lp(2, 1.5))),
    ]
}

/// Looks up a bundled fixture by file name, with or without the `.json` suffix.
pub fn by_name(name: &str) -> Option<SubFinslerStructure> {
    let key = name.trim_end_matches(".json");
    bundled().into_iter().find(|(f, _)| f.trim_end_matches(".json") == key).map(|(_, s)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn fixture_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    #[test]
    fn bundled_files_match_builders() {
        let dir = fixture_dir();
        if std::env::var_os("SFLAB_REGENERATE_FIXTURES").is_some() {
            std::fs::create_dir_all(&dir).unwrap();
            for (name, s) in bundled() {
                std::fs::write(dir.join(name), s.to_json() + "\n").unwrap();
            }
        }
        for (name, s) in bundled() {
            let loaded = SubFinslerStructure::load(&dir.join(name)).unwrap();
            assert_eq!(loaded.fields(), s.fields(), "{name}");
            assert_eq!(loaded.content_hash(), s.content_hash(), "{name}");
        }
    }

    #[test]
    fn perturbed_contact_flag() {
        let s = contact_perturbed(NormFamily::lp(2, 1.5));
        let f = s.flag_at(&[0.0; 3], 4).unwrap();
        assert_eq!(f.growth, vec![2, 3]);
        assert!(f.regular);
    }
}
