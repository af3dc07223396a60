//! Experiment files bundled into the binary.

const PRESETS: [(&str, &str); 12] = [
    ("exp01", include_str!("../presets/exp01.toml")),
    ("exp02", include_str!("../presets/exp02.toml")),
    ("exp03", include_str!("../presets/exp03.toml")),
    ("exp04", include_str!("../presets/exp04.toml")),
    ("exp05", include_str!("../presets/exp05.toml")),
    ("exp06", include_str!("../presets/exp06.toml")),
    ("exp07", include_str!("../presets/exp07.toml")),
    ("exp08", include_str!("../presets/exp08.toml")),
    ("exp09", include_str!("../presets/exp09.toml")),
    ("exp10", include_str!("../presets/exp10.toml")),
    ("exp11", include_str!("../presets/exp11.toml")),
    ("exp12", include_str!("../presets/exp12.toml")),
];

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}
