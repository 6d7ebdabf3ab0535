use std::collections::BTreeSet;

use super::TaskInstance;

/// Distracting-instance exclusions: answers that are common words, plus an
/// explicit id list.
#[derive(Debug, Clone, Default)]
pub struct ExclusionList {
    pub words: BTreeSet<String>,
    pub instance_ids: BTreeSet<String>,
}

impl ExclusionList {
    pub fn is_empty(&self) -> bool {
        self.words.is_empty() && self.instance_ids.is_empty()
    }
}

/// Marks excluded instances, keeping order. Instances already excluded
/// keep their original reason.
pub fn filter_suite(instances: &[TaskInstance], exclusion: &ExclusionList) -> Vec<TaskInstance> {
    instances
        .iter()
        .map(|inst| {
            let mut inst = inst.clone();
            if inst.excluded {
                return inst;
            }
            if exclusion.instance_ids.contains(&inst.instance_id) {
                inst.excluded = true;
                inst.exclusion_reason = Some("listed in exclusion id list".into());
            } else if let Some(answer) = inst.designated_answer().filter(|a| exclusion.words.contains(*a)) {
                inst.exclusion_reason = Some(format!("answer {answer:?} is in the exclusion word list"));
                inst.excluded = true;
            }
            inst
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::VerifierSpec;

    fn suite() -> Vec<TaskInstance> {
        ["i1", "i2", "i3"]
            .iter()
            .zip(["Titanic", "it", "Up"])
            .map(|(id, ans)| TaskInstance::new(*id, "prompt", VerifierSpec::substring([ans])))
            .collect()
    }

    #[test]
    fn empty_exclusion_is_identity() {
        let s = suite();
        assert_eq!(filter_suite(&s, &ExclusionList::default()), s);
    }

    #[test]
    fn common_word_answer_is_excluded() {
        let ex = ExclusionList {
            words: ["it".to_string()].into(),
            ..Default::default()
        };
        let out = filter_suite(&suite(), &ex);
        assert!(!out[0].excluded);
        assert!(out[1].excluded);
        assert!(out[1].exclusion_reason.as_deref().unwrap().contains("\"it\""));
        assert!(!out[2].excluded);
    }

    #[test]
    fn explicit_ids() {
        let ex = ExclusionList {
            instance_ids: ["i3".to_string()].into(),
            ..Default::default()
        };
        let out = filter_suite(&suite(), &ex);
        let ids: Vec<_> = out.iter().filter(|i| i.excluded).map(|i| i.instance_id.as_str()).collect();
        assert_eq!(ids, ["i3"]);
        assert_eq!(out.iter().map(|i| &i.instance_id).collect::<Vec<_>>(), ["i1", "i2", "i3"]);
    }
}
