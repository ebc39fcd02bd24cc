use std::fmt;

/// One of the three input modalities, in the fixed concatenation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Image,
    Spectrogram,
    Sign,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Spectrogram, Modality::Sign];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Spectrogram => "spectrogram",
            Modality::Sign => "sign",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which branches are live. A muted branch contributes an all-zero feature
/// vector of its usual width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModalityMask {
    pub image: bool,
    pub spectrogram: bool,
    pub sign: bool,
}

impl ModalityMask {
    pub const FULL: ModalityMask = ModalityMask::new(true, true, true);
    pub const NONE: ModalityMask = ModalityMask::new(false, false, false);

    pub const fn new(image: bool, spectrogram: bool, sign: bool) -> Self {
        Self {
            image,
            spectrogram,
            sign,
        }
    }

    pub fn is_on(self, m: Modality) -> bool {
        match m {
            Modality::Image => self.image,
            Modality::Spectrogram => self.spectrogram,
            Modality::Sign => self.sign,
        }
    }

    pub fn is_full(self) -> bool {
        self == Self::FULL
    }

    /// All eight masks, ordered by their 3-bit code.
    pub fn all() -> impl Iterator<Item = ModalityMask> {
        (0u8..8).map(Self::from_bits)
    }

    /// Bit 0 = image, bit 1 = spectrogram, bit 2 = sign.
    pub fn bits(self) -> u8 {
        self.image as u8 | (self.spectrogram as u8) << 1 | (self.sign as u8) << 2
    }

    pub fn from_bits(bits: u8) -> Self {
        Self::new(bits & 1 != 0, bits & 2 != 0, bits & 4 != 0)
    }
}

impl fmt::Display for ModalityMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on: Vec<_> = Modality::ALL
            .iter()
            .filter(|m| self.is_on(**m))
            .map(|m| m.name())
            .collect();
        if on.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&on.join("+"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_distinct_masks() {
        let all: Vec<_> = ModalityMask::all().collect();
        assert_eq!(all.len(), 8);
        for (i, m) in all.iter().enumerate() {
            assert_eq!(m.bits() as usize, i);
        }
        assert_eq!(ModalityMask::from_bits(7), ModalityMask::FULL);
        assert_eq!(ModalityMask::NONE.to_string(), "none");
        assert_eq!(ModalityMask::new(false, true, true).to_string(), "spectrogram+sign");
    }
}
