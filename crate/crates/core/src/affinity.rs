//! Node affinity evaluation.
//!
//! Only the `In` and `Gt` operators exist. A `Gt` rule over a label the node
//! does not advertise evaluates to false, so a node with no walltime budget
//! (and hence no `jiriaf.alivetime`) never satisfies a lifetime requirement.

use thiserror::Error;

use crate::model::{AffinityOperator, AffinityRule, LabelMap, NodeLabels};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AffinityError {
    #[error("rule on {key:?}: Gt needs exactly one integer value, got {values:?}")]
    MalformedGt { key: String, values: Vec<String> },
    #[error("rule on {key:?}: In needs at least one value")]
    EmptyIn { key: String },
}

/// Checks a rule's shape; `None` when well formed.
pub(crate) fn rule_problem(rule: &AffinityRule) -> Option<String> {
    check_rule(rule).err().map(|e| e.to_string())
}

fn check_rule(rule: &AffinityRule) -> Result<(), AffinityError> {
    match rule.operator {
        AffinityOperator::In if rule.values.is_empty() => Err(AffinityError::EmptyIn {
            key: rule.key.clone(),
        }),
        AffinityOperator::In => Ok(()),
        AffinityOperator::Gt => gt_threshold(rule).map(|_| ()),
    }
}

fn gt_threshold(rule: &AffinityRule) -> Result<i64, AffinityError> {
    match rule.values.as_slice() {
        [only] => only.trim().parse::<i64>().map_err(|_| AffinityError::MalformedGt {
            key: rule.key.clone(),
            values: rule.values.clone(),
        }),
        _ => Err(AffinityError::MalformedGt {
            key: rule.key.clone(),
            values: rule.values.clone(),
        }),
    }
}

/// True iff every rule matches the node's `jiriaf.*` labels.
pub fn match_affinity(labels: &NodeLabels, rules: &[AffinityRule]) -> Result<bool, AffinityError> {
    match_affinity_labels(&labels.to_map(), rules)
}

/// Same as [`match_affinity`] over an arbitrary label map (node labels plus
/// any extra labels the node carries).
pub fn match_affinity_labels(labels: &LabelMap, rules: &[AffinityRule]) -> Result<bool, AffinityError> {
    for rule in rules {
        check_rule(rule)?;
        let value = labels.get(&rule.key);
        let matched = match rule.operator {
            AffinityOperator::In => value.is_some_and(|v| rule.values.iter().any(|want| want == v)),
            AffinityOperator::Gt => {
                let threshold = gt_threshold(rule)?;
                value
                    .and_then(|v| v.trim().parse::<i64>().ok())
                    .is_some_and(|v| v > threshold)
            }
        };
        if !matched {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LABEL_ALIVETIME, LABEL_NODETYPE, LABEL_SITE};
    use proptest::prelude::*;

    fn example_rules() -> Vec<AffinityRule> {
        vec![
            AffinityRule::is_in(LABEL_NODETYPE, &["cpu"]),
            AffinityRule::is_in(LABEL_SITE, &["nersc"]),
            AffinityRule::greater_than(LABEL_ALIVETIME, 10),
        ]
    }

    fn labels(alivetime: Option<u64>) -> NodeLabels {
        NodeLabels {
            nodetype: "cpu".into(),
            site: "nersc".into(),
            alivetime,
        }
    }

    #[test]
    fn example_rules_match_long_lived_node() {
        assert_eq!(match_affinity(&labels(Some(20)), &example_rules()), Ok(true));
    }

    #[test]
    fn short_lived_node_fails_gt() {
        assert_eq!(match_affinity(&labels(Some(5)), &example_rules()), Ok(false));
        // strict inequality
        assert_eq!(match_affinity(&labels(Some(10)), &example_rules()), Ok(false));
    }

    #[test]
    fn absent_alivetime_fails_gt() {
        assert_eq!(match_affinity(&labels(None), &example_rules()), Ok(false));
    }

    #[test]
    fn wrong_site_fails_in() {
        let mut l = labels(Some(100));
        l.site = "Local".into();
        assert_eq!(match_affinity(&l, &example_rules()), Ok(false));
    }

    #[test]
    fn malformed_gt_is_an_error() {
        let rule = AffinityRule {
            key: LABEL_ALIVETIME.into(),
            operator: AffinityOperator::Gt,
            values: vec!["ten".into()],
        };
        assert!(matches!(
            match_affinity(&labels(Some(20)), &[rule]),
            Err(AffinityError::MalformedGt { .. })
        ));
        let two = AffinityRule {
            key: LABEL_ALIVETIME.into(),
            operator: AffinityOperator::Gt,
            values: vec!["1".into(), "2".into()],
        };
        assert!(match_affinity(&labels(Some(20)), &[two]).is_err());
    }

    #[test]
    fn non_integer_label_does_not_match_gt() {
        let mut map = LabelMap::new();
        map.insert("weight".into(), "heavy".into());
        let rule = AffinityRule::greater_than("weight", 1);
        assert_eq!(match_affinity_labels(&map, &[rule]), Ok(false));
    }

    proptest! {
        #[test]
        fn empty_rules_always_match(nodetype in "[a-z]{0,6}", site in "[a-z]{0,6}", alive in proptest::option::of(0u64..10_000)) {
            let l = NodeLabels { nodetype, site, alivetime: alive };
            prop_assert_eq!(match_affinity(&l, &[]), Ok(true));
        }

        #[test]
        fn gt_rules_are_monotone_in_alivetime(
            thresholds in proptest::collection::vec(-5i64..200, 1..4),
            k in 0u64..300,
            bump in 1u64..300,
        ) {
            let rules: Vec<_> = thresholds.iter().map(|t| AffinityRule::greater_than(LABEL_ALIVETIME, *t)).collect();
            if match_affinity(&labels(Some(k)), &rules).unwrap() {
                prop_assert!(match_affinity(&labels(Some(k + bump)), &rules).unwrap());
            }
        }
    }
}
