use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModalityMask;

/// Modalities available to clients during (support-set) training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioId {
    ImgSign,
    SpSign,
    ImgSp,
    Img,
    Sp,
    Sign,
    Full,
}

impl ScenarioId {
    /// The six missing-modality scenarios, in table column order.
    pub const MISSING: [ScenarioId; 6] = [
        ScenarioId::ImgSign,
        ScenarioId::SpSign,
        ScenarioId::ImgSp,
        ScenarioId::Img,
        ScenarioId::Sp,
        ScenarioId::Sign,
    ];

    pub const ALL: [ScenarioId; 7] = [
        ScenarioId::ImgSign,
        ScenarioId::SpSign,
        ScenarioId::ImgSp,
        ScenarioId::Img,
        ScenarioId::Sp,
        ScenarioId::Sign,
        ScenarioId::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::ImgSign => "img/sign",
            ScenarioId::SpSign => "sp/sign",
            ScenarioId::ImgSp => "img/sp",
            ScenarioId::Img => "img",
            ScenarioId::Sp => "sp",
            ScenarioId::Sign => "sign",
            ScenarioId::Full => "full",
        }
    }

    /// Mask of the modalities that are present.
    pub fn available(self) -> ModalityMask {
        match self {
            ScenarioId::ImgSign => ModalityMask::new(true, false, true),
            ScenarioId::SpSign => ModalityMask::new(false, true, true),
            ScenarioId::ImgSp => ModalityMask::new(true, true, false),
            ScenarioId::Img => ModalityMask::new(true, false, false),
            ScenarioId::Sp => ModalityMask::new(false, true, false),
            ScenarioId::Sign => ModalityMask::new(false, false, true),
            ScenarioId::Full => ModalityMask::FULL,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    /// Accepts the canonical names plus the `spect`/`spectrogram` spellings.
    fn from_str(s: &str) -> Result<Self> {
        let id = match s.trim() {
            "img/sign" => ScenarioId::ImgSign,
            "sp/sign" | "spect/sign" | "spectrogram/sign" => ScenarioId::SpSign,
            "img/sp" | "img/spect" | "img/spectrogram" => ScenarioId::ImgSp,
            "img" => ScenarioId::Img,
            "sp" | "spect" | "spectrogram" => ScenarioId::Sp,
            "sign" => ScenarioId::Sign,
            "full" => ScenarioId::Full,
            other => {
                return Err(Error::config(format!(
                    "unknown scenario `{other}` (expected one of img/sign, sp/sign, img/sp, img, sp, sign, full)"
                )))
            }
        };
        Ok(id)
    }
}
