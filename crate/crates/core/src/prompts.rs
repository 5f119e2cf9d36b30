//! Versioned prompt assets, one per agent message.
//!
//! Templates use `{name}` placeholders. Only the placeholders an asset declares
//! are substituted; any other braces (JSON examples inside the prompts) are
//! left untouched.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy)]
pub struct PromptAsset {
    pub name: &'static str,
    pub version: u32,
    pub template: &'static str,
    pub placeholders: &'static [&'static str],
}

macro_rules! asset {
    ($ident:ident, $name:literal, $version:literal, [$($ph:literal),*]) => {
        pub const $ident: PromptAsset = PromptAsset {
            name: $name,
            version: $version,
            template: include_str!(concat!("../prompts/", $name, ".txt")),
            placeholders: &[$($ph),*],
        };
    };
}

asset!(PARAPHRASE_SEMANTIC_SYSTEM, "paraphrase_semantic.system", 1, []);
asset!(PARAPHRASE_SEMANTIC_USER, "paraphrase_semantic.user", 1, ["change_intensity", "num_candidates", "input_sentence"]);
asset!(PARAPHRASE_LOGICAL_SYSTEM, "paraphrase_logical.system", 1, []);
asset!(PARAPHRASE_LOGICAL_USER, "paraphrase_logical.user", 1, ["question", "options", "num_candidates", "num_options"]);
asset!(DECOMPOSE_VQA_SYSTEM, "decompose_vqa.system", 1, []);
asset!(DECOMPOSE_VQA_USER, "decompose_vqa.user", 1, ["question", "num_questions"]);
asset!(CAPTION_CLAIMS_SYSTEM, "caption_claims.system", 1, []);
asset!(CAPTION_CLAIMS_USER, "caption_claims.user", 1, ["SHORT_CAPTION"]);
asset!(CAPTION_VERIFY_SYSTEM, "caption_verify.system", 1, []);
asset!(CAPTION_VERIFY_USER, "caption_verify.user", 1, ["claims", "caption_view", "detailed_caption", "num_questions"]);
asset!(AGGREGATE_VQA_USER, "aggregate_vqa.user", 1, ["question", "sub"]);
asset!(CAPTION_JUDGE_SYSTEM, "caption_judge.system", 1, []);
asset!(CAPTION_JUDGE_USER, "caption_judge.user", 1, ["SHORT_CAPTION", "claims", "sub"]);
asset!(JUDGE_RJV_SYSTEM, "judge_rjv.system", 1, []);
asset!(JUDGE_RJV_USER, "judge_rjv.user", 1, ["question", "answer", "rationale"]);
asset!(AGGREGATE_GLOBAL_SYSTEM, "aggregate_global.system", 1, []);
asset!(AGGREGATE_GLOBAL_USER, "aggregate_global.user", 1, ["question", "sub"]);

pub const ALL: &[PromptAsset] = &[
    PARAPHRASE_SEMANTIC_SYSTEM,
    PARAPHRASE_SEMANTIC_USER,
    PARAPHRASE_LOGICAL_SYSTEM,
    PARAPHRASE_LOGICAL_USER,
    DECOMPOSE_VQA_SYSTEM,
    DECOMPOSE_VQA_USER,
    CAPTION_CLAIMS_SYSTEM,
    CAPTION_CLAIMS_USER,
    CAPTION_VERIFY_SYSTEM,
    CAPTION_VERIFY_USER,
    AGGREGATE_VQA_USER,
    CAPTION_JUDGE_SYSTEM,
    CAPTION_JUDGE_USER,
    JUDGE_RJV_SYSTEM,
    JUDGE_RJV_USER,
    AGGREGATE_GLOBAL_SYSTEM,
    AGGREGATE_GLOBAL_USER,
];

/// Manifest entry identifying the exact text of one asset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetVersion {
    pub name: String,
    pub version: u32,
    pub sha256: String,
}

impl PromptAsset {
    pub fn text(&self) -> &'static str {
        self.template.trim_end()
    }

    /// Substitutes every declared placeholder.
    ///
    /// Panics if `values` misses a declared placeholder; that is a programming
    /// error in the calling agent, not a runtime condition.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = self.text().to_owned();
        for ph in self.placeholders {
            let value = values
                .iter()
                .find(|(k, _)| k == ph)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("prompt `{}` rendered without `{{{ph}}}`", self.name));
            out = out.replace(&format!("{{{ph}}}"), value);
        }
        out
    }

    pub fn version_info(&self) -> AssetVersion {
        AssetVersion {
            name: self.name.to_owned(),
            version: self.version,
            sha256: hex::encode(Sha256::digest(self.template.as_bytes())),
        }
    }
}

pub fn asset_versions() -> Vec<AssetVersion> {
    ALL.iter().map(PromptAsset::version_info).collect()
}
