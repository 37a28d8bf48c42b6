//! Recipes and the line-delimited JSON corpus and pair files.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ReLeMError, Result};
use crate::vocab::{build_semantic_vocab, tokenize, SemanticVocabulary, TokenVocabulary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recipe {
    pub recipe_id: String,
    pub ingredient_tokens: Vec<usize>,
    pub instruction_sentences: Vec<Vec<usize>>,
    pub semantic_label: Option<usize>,
}

impl Recipe {
    pub fn validate(&self, vocab_size: usize, k: usize) -> Result<()> {
        if self.ingredient_tokens.is_empty() {
            return Err(ReLeMError::EmptyIngredients(self.recipe_id.clone()));
        }
        if self.instruction_sentences.is_empty() || self.instruction_sentences.iter().any(Vec::is_empty) {
            return Err(ReLeMError::EmptyInstructions(self.recipe_id.clone()));
        }
        let tokens = self.ingredient_tokens.iter().chain(self.instruction_sentences.iter().flatten());
        for &id in tokens {
            if id >= vocab_size {
                return Err(ReLeMError::UnknownToken { id, vocab: vocab_size });
            }
        }
        match self.semantic_label {
            Some(label) if label >= k => Err(ReLeMError::LabelOutOfRange { label, k }),
            _ => Ok(()),
        }
    }
}

/// One line of a recipe corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeRecord {
    pub id: String,
    pub title: String,
    pub ingredients: Vec<String>,
    pub instructions: Vec<String>,
}

/// One line of a pair file: an image and the recipe it depicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub image: PathBuf,
    pub recipe_id: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let io = |source| ReLeMError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| ReLeMError::Corpus(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("records serialize");
        buf.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|source| ReLeMError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn load_recipe_records(path: &Path) -> Result<Vec<RecipeRecord>> {
    read_jsonl(path)
}

pub fn save_recipe_records(path: &Path, records: &[RecipeRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    read_jsonl(path)
}

pub fn save_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    write_jsonl(path, pairs)
}

/// Ingredient names become single tokens with inner spaces replaced by `_`.
pub fn ingredient_token(name: &str) -> String {
    tokenize(name).join("_")
}

/// A tokenized corpus together with its vocabularies.
#[derive(Debug, Clone)]
pub struct RecipeCorpus {
    pub tokens: TokenVocabulary,
    pub semantic: SemanticVocabulary,
    pub recipes: Vec<Recipe>,
    pub index: HashMap<String, usize>,
}

impl RecipeCorpus {
    /// Builds both vocabularies from the records and tokenizes them. Empty
    /// instruction sentences are dropped.
    pub fn build(records: &[RecipeRecord], num_semantic: usize) -> Result<Self> {
        let mut words = BTreeSet::new();
        for r in records {
            words.extend(r.ingredients.iter().map(|i| ingredient_token(i)));
            for s in &r.instructions {
                words.extend(tokenize(s));
            }
        }
        words.remove("");
        let tokens = TokenVocabulary::from_tokens(words);
        let titles: Vec<&str> = records.iter().map(|r| r.title.as_str()).collect();
        let semantic = build_semantic_vocab(&titles, num_semantic)?.vocab;
        let mut recipes = Vec::with_capacity(records.len());
        let mut index = HashMap::new();
        for r in records {
            let ingredient_tokens = r
                .ingredients
                .iter()
                .filter_map(|i| tokens.id(&ingredient_token(i)))
                .collect();
            let instruction_sentences = r
                .instructions
                .iter()
                .map(|s| tokenize(s).iter().filter_map(|w| tokens.id(w)).collect::<Vec<_>>())
                .filter(|s| !s.is_empty())
                .collect();
            let recipe = Recipe {
                recipe_id: r.id.clone(),
                ingredient_tokens,
                instruction_sentences,
                semantic_label: semantic.label(&r.title),
            };
            recipe.validate(tokens.len(), semantic.k)?;
            if index.insert(r.id.clone(), recipes.len()).is_some() {
                return Err(ReLeMError::Corpus(format!("duplicate recipe id {}", r.id)));
            }
            recipes.push(recipe);
        }
        Ok(Self {
            tokens,
            semantic,
            recipes,
            index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, title: &str) -> RecipeRecord {
        RecipeRecord {
            id: id.into(),
            title: title.into(),
            ingredients: vec!["Green Beans".into(), "salt".into()],
            instructions: vec!["Boil the beans.".into(), "...".into(), "Add salt".into()],
        }
    }

    #[test]
    fn corpus_tokenizes_and_labels() {
        let c = RecipeCorpus::build(&[record("a", "Beans"), record("b", "beans!"), record("c", "Soup")], 10).unwrap();
        assert_eq!(c.semantic.k, 2);
        let r = &c.recipes[c.index["b"]];
        assert_eq!(r.semantic_label, Some(0));
        assert_eq!(r.ingredient_tokens.len(), 2);
        assert_eq!(c.tokens.token(r.ingredient_tokens[0]), Some("green_beans"));
        assert_eq!(r.instruction_sentences.len(), 2);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(RecipeCorpus::build(&[record("a", "x"), record("a", "y")], 4).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let recs = vec![record("a", "x"), record("b", "y")];
        save_recipe_records(&p, &recs).unwrap();
        assert_eq!(load_recipe_records(&p).unwrap(), recs);
        let pairs = vec![PairRecord { image: "images/0.png".into(), recipe_id: "a".into() }];
        let q = dir.path().join("p.jsonl");
        save_pairs(&q, &pairs).unwrap();
        assert_eq!(load_pairs(&q).unwrap(), pairs);
    }

    #[test]
    fn validation_errors() {
        let ok = Recipe {
            recipe_id: "r".into(),
            ingredient_tokens: vec![0],
            instruction_sentences: vec![vec![1]],
            semantic_label: Some(1),
        };
        assert!(ok.validate(2, 2).is_ok());
        assert!(matches!(ok.validate(1, 2), Err(ReLeMError::UnknownToken { id: 1, .. })));
        assert!(matches!(ok.validate(2, 1), Err(ReLeMError::LabelOutOfRange { .. })));
        let empty = Recipe { ingredient_tokens: vec![], ..ok.clone() };
        assert!(matches!(empty.validate(2, 2), Err(ReLeMError::EmptyIngredients(_))));
        let no_ins = Recipe { instruction_sentences: vec![], ..ok };
        assert!(matches!(no_ins.validate(2, 2), Err(ReLeMError::EmptyInstructions(_))));
    }
}
