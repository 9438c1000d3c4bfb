pub mod anchors;
pub mod fit;
pub mod ingest;
pub mod regress;
pub mod report;
pub mod simulate;

use brett_core::ContrastScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Contrast {
    Treatment,
    SumToZero,
}

impl Contrast {
    pub fn scheme(self) -> ContrastScheme {
        match self {
            Contrast::Treatment => ContrastScheme::TreatmentBaseline,
            Contrast::SumToZero => ContrastScheme::SumToZero,
        }
    }
}
