use super::ModelSpec;

/// One named model of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub name: &'static str,
    pub spec: ModelSpec,
}

const R3: &[f64] = &[0.3, 0.3];
const R5: &[f64] = &[0.5, 0.5];

/// The sixteen named models. Checkpoint aliases (`<name>-Best`) are not
/// separate models; every run produces both. M1-3 and M1-4 share a spec
/// and differ only in their run seed.
pub fn table1() -> Vec<GridEntry> {
    let simple = |n, r: &[f64]| ModelSpec::simple(n, r);
    let aug = |r: &[f64]| ModelSpec::simple(4, r).with_augment(true);
    let vgg = |r: &[f64], augment, fine_tune| ModelSpec::vgg(r, fine_tune).with_augment(augment);
    [
        ("M1-1", simple(3, &[])),
        ("M1-2", simple(4, &[])),
        ("M1-3", simple(4, R3)),
        ("M1-4", simple(4, R3)),
        ("M1-5", simple(4, R5)),
        ("M2-1", aug(&[])),
        ("M2-2", aug(R3)),
        ("M2-3", aug(R5)),
        ("M3-4", vgg(R3, false, false)),
        ("M3-5", vgg(&[], true, false)),
        ("M3-6", vgg(R5, true, false)),
        ("M3-7", vgg(&[], true, false)),
        ("M3-8", vgg(&[], true, true)),
        ("M3-9", vgg(R3, true, true)),
        ("M3-10", vgg(R5, true, true)),
        ("M3-11", vgg(&[], true, true)),
    ]
    .into_iter()
    .map(|(name, spec)| GridEntry { name, spec })
    .collect()
}

/// Spec of a grid model by name (a trailing `-Best` is accepted).
pub fn table1_spec(name: &str) -> Option<ModelSpec> {
    let base = name.strip_suffix("-Best").unwrap_or(name);
    table1().into_iter().find(|e| e.name == base).map(|e| e.spec)
}
