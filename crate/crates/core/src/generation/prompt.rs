use std::path::Path;

use crate::collection::Query;
use crate::error::{Error, Result};
use crate::retrievers::RankedList;

const INPUT: &str = "{input}";
const ITEMS: &str = "{items}";

/// Prompt layout with exactly one `{input}` and one `{items}` placeholder.
/// Ranked item texts are joined with `delimiter` in ranking order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    template: String,
    delimiter: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            template: "Question: {input}\nContext:\n{items}\nAnswer:".into(),
            delimiter: "\n".into(),
        }
    }
}

impl PromptTemplate {
    pub fn new(template: impl Into<String>, delimiter: impl Into<String>) -> Result<Self> {
        let template = template.into();
        for placeholder in [INPUT, ITEMS] {
            let count = template.matches(placeholder).count();
            if count != 1 {
                return Err(Error::Config(format!(
                    "prompt template must contain `{placeholder}` exactly once (found {count})"
                )));
            }
        }
        Ok(Self {
            template,
            delimiter: delimiter.into(),
        })
    }

    pub fn load(path: &Path, delimiter: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text, delimiter)
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn delimiter(&self) -> &str {
        &self.delimiter
    }

    fn render(&self, input: &str, items: &str) -> String {
        // Split around the placeholders so substituted text is never rescanned.
        let i = self.template.find(INPUT).expect("validated");
        let j = self.template.find(ITEMS).expect("validated");
        let (first, first_len, first_val, second, second_len, second_val) = if i < j {
            (i, INPUT.len(), input, j, ITEMS.len(), items)
        } else {
            (j, ITEMS.len(), items, i, INPUT.len(), input)
        };
        let mut out = String::with_capacity(self.template.len() + input.len() + items.len());
        out.push_str(&self.template[..first]);
        out.push_str(first_val);
        out.push_str(&self.template[first + first_len..second]);
        out.push_str(second_val);
        out.push_str(&self.template[second + second_len..]);
        out
    }
}

/// Renders the prompt for `query` with the ranked items in ranking order.
pub fn build_prompt(
    query: &Query,
    ranking: &RankedList,
    template: &PromptTemplate,
) -> Result<String> {
    build_prompt_from_indices(query, &ranking.items, template)
}

pub fn build_prompt_from_indices(
    query: &Query,
    items: &[usize],
    template: &PromptTemplate,
) -> Result<String> {
    let mut texts = Vec::with_capacity(items.len());
    for &idx in items {
        let item = query.corpus.get(idx).ok_or_else(|| Error::UnknownItem {
            query_id: query.query_id.clone(),
            item_id: format!("#{idx}"),
        })?;
        texts.push(item.text.as_str());
    }
    Ok(template.render(&query.input_text, &texts.join(&template.delimiter)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collection::Item;
    use std::collections::BTreeMap;

    fn query() -> Query {
        Query {
            query_id: "q".into(),
            input_text: "who {items} wrote it".into(),
            target_output: "y".into(),
            corpus: ["alpha", "beta", "gamma"]
                .iter()
                .enumerate()
                .map(|(j, t)| Item {
                    item_id: format!("d{j}"),
                    text: (*t).into(),
                    provider_id: None,
                })
                .collect(),
            labels: None,
            scores: BTreeMap::new(),
        }
    }

    fn ranked(items: &[usize]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            items: items.to_vec(),
            truncation_k: 5,
        }
    }

    #[test]
    fn renders_in_ranking_order() {
        let t = PromptTemplate::new("[{items}] {input}", " | ").unwrap();
        let q = query();
        assert_eq!(
            build_prompt(&q, &ranked(&[]), &t).unwrap(),
            "[] who {items} wrote it"
        );
        assert_eq!(
            build_prompt(&q, &ranked(&[1]), &t).unwrap(),
            "[beta] who {items} wrote it"
        );
        let ab = build_prompt(&q, &ranked(&[0, 2]), &t).unwrap();
        let ba = build_prompt(&q, &ranked(&[2, 0]), &t).unwrap();
        assert_eq!(ab, "[alpha | gamma] who {items} wrote it");
        assert_ne!(ab, ba);
    }

    #[test]
    fn rejects_bad_templates_and_items() {
        assert!(PromptTemplate::new("{input}", "\n").is_err());
        assert!(PromptTemplate::new("{input} {items} {items}", "\n").is_err());
        let t = PromptTemplate::default();
        assert!(matches!(
            build_prompt(&query(), &ranked(&[7]), &t),
            Err(Error::UnknownItem { .. })
        ));
    }
}
