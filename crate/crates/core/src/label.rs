use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the seven expression classes.
///
/// The class index is fixed across every crate in the workspace:
///
/// | index | label    |
/// |-------|----------|
/// | 0     | angry    |
/// | 1     | disgust  |
/// | 2     | fear     |
/// | 3     | happy    |
/// | 4     | neutral  |
/// | 5     | sad      |
/// | 6     | surprise |
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Angry,
    Disgust,
    Fear,
    Happy,
    Neutral,
    Sad,
    Surprise,
}

/// Result of parsing a raw expression string from a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParsedExpression {
    Label(EmotionLabel),
    /// CK+ contempt frames; not one of the seven classes.
    Contempt,
}

impl EmotionLabel {
    pub const COUNT: usize = 7;

    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Angry,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Happy,
        EmotionLabel::Neutral,
        EmotionLabel::Sad,
        EmotionLabel::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprise => "surprise",
        }
    }

    /// Parses a label spelling used by any of the source datasets.
    ///
    /// Matching is case-insensitive and accepts the full names, adjective
    /// forms ("afraid", "disgusted", "surprised") and the two-letter KDEF /
    /// JAFFE codes (`AF`, `AN`, `DI`, `FE`, `HA`, `NE`, `SA`, `SU`).
    pub fn parse_expression(raw: &str) -> Option<ParsedExpression> {
        let lowered = raw.trim().to_ascii_lowercase();
        let label = match lowered.as_str() {
            "angry" | "anger" | "an" | "ang" => EmotionLabel::Angry,
            "disgust" | "disgusted" | "di" | "dis" => EmotionLabel::Disgust,
            "fear" | "afraid" | "fearful" | "af" | "fe" | "fea" => EmotionLabel::Fear,
            "happy" | "happiness" | "ha" | "hap" => EmotionLabel::Happy,
            "neutral" | "ne" | "neu" => EmotionLabel::Neutral,
            "sad" | "sadness" | "sa" => EmotionLabel::Sad,
            "surprise" | "surprised" | "su" | "sur" => EmotionLabel::Surprise,
            "contempt" | "co" => return Some(ParsedExpression::Contempt),
            _ => return None,
        };
        Some(ParsedExpression::Label(label))
    }

    /// CK+ numeric emotion codes (0 neutral, 1 anger, 2 contempt, 3 disgust,
    /// 4 fear, 5 happy, 6 sadness, 7 surprise).
    pub fn from_ckplus_code(code: u32) -> Option<ParsedExpression> {
        let label = match code {
            0 => EmotionLabel::Neutral,
            1 => EmotionLabel::Angry,
            2 => return Some(ParsedExpression::Contempt),
            3 => EmotionLabel::Disgust,
            4 => EmotionLabel::Fear,
            5 => EmotionLabel::Happy,
            6 => EmotionLabel::Sad,
            7 => EmotionLabel::Surprise,
            _ => return None,
        };
        Some(ParsedExpression::Label(label))
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match Self::parse_expression(s) {
            Some(ParsedExpression::Label(label)) => Ok(label),
            _ => Err(format!("unknown emotion label `{s}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_mapping_is_stable() {
        for (i, label) in EmotionLabel::ALL.iter().enumerate() {
            assert_eq!(label.index(), i);
            assert_eq!(EmotionLabel::from_index(i), Some(*label));
        }
        assert_eq!(EmotionLabel::from_index(7), None);
        assert_eq!(EmotionLabel::Happy.index(), 3);
    }

    #[test]
    fn spellings_normalize() {
        assert_eq!("Afraid".parse::<EmotionLabel>(), Ok(EmotionLabel::Fear));
        assert_eq!("AF".parse::<EmotionLabel>(), Ok(EmotionLabel::Fear));
        assert_eq!("SURPRISED".parse::<EmotionLabel>(), Ok(EmotionLabel::Surprise));
        assert_eq!(" happy ".parse::<EmotionLabel>(), Ok(EmotionLabel::Happy));
        assert!("contempt".parse::<EmotionLabel>().is_err());
        assert_eq!(
            EmotionLabel::parse_expression("Contempt"),
            Some(ParsedExpression::Contempt)
        );
        assert_eq!(EmotionLabel::parse_expression("bored"), None);
    }

    #[test]
    fn ckplus_codes() {
        assert_eq!(EmotionLabel::from_ckplus_code(2), Some(ParsedExpression::Contempt));
        assert_eq!(
            EmotionLabel::from_ckplus_code(6),
            Some(ParsedExpression::Label(EmotionLabel::Sad))
        );
        assert_eq!(EmotionLabel::from_ckplus_code(8), None);
    }

    #[test]
    fn serde_uses_lowercase_names() {
        let json = serde_json::to_string(&EmotionLabel::Surprise).unwrap();
        assert_eq!(json, "\"surprise\"");
    }
}
