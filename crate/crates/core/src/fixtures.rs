//! Fixtures shipped with the library.

use crate::error::{Error, Result};
use crate::problem::{parse_fixture, Fixture};

const SOURCES: &[(&str, &str)] = &[
    ("example11", include_str!("../fixtures/example11.toml")),
    ("zero", include_str!("../fixtures/zero.toml")),
    (
        "cubic_blowup",
        include_str!("../fixtures/cubic_blowup.toml"),
    ),
    ("quadratic", include_str!("../fixtures/quadratic.toml")),
    ("linear_p", include_str!("../fixtures/linear_p.toml")),
    (
        "linear_big_p",
        include_str!("../fixtures/linear_big_p.toml"),
    ),
    ("nonsingular", include_str!("../fixtures/nonsingular.toml")),
    ("suboptimal", include_str!("../fixtures/suboptimal.toml")),
    ("convex", include_str!("../fixtures/convex.toml")),
    ("lq_optimal", include_str!("../fixtures/lq_optimal.toml")),
    ("kernel", include_str!("../fixtures/kernel.toml")),
    ("gbm", include_str!("../fixtures/gbm.toml")),
    ("coupled2d", include_str!("../fixtures/coupled2d.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<Fixture> {
    let text = source(name).ok_or_else(|| Error::Config(format!("no fixture named `{name}`")))?;
    parse_fixture(text)
}

/// The singular mean-field example with analytic solution `u = 0`, `X = 1`.
pub fn example11() -> Fixture {
    load("example11").expect("embedded fixture parses")
}
