//! Model stand-ins that never finish properly: they explore forever, never
//! confirm, or answer with junk.

use std::sync::Mutex;

use apexsql_core::llm::{Backend, BackendReply};
use apexsql_core::{ChatRequest, GatewayError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub enum Behavior {
    AlwaysExplore,
    /// Explores with several statements per action.
    ExploreBatch,
    /// Valid SQL every time, never a confirmation.
    SqlNeverConfirm,
    /// Failing SQL every time.
    BrokenSql,
    RefineOnly,
    ConfirmWithoutSql,
    Garbage,
    Empty,
    UnclosedFence,
    /// Output far past the per-call output limit.
    Oversized,
    /// Reports a large output token count on every reply.
    TokenHeavy(u64),
    /// A different non-confirming behavior on each call.
    Random,
}

pub struct Script {
    pub name: String,
    pub behavior: Behavior,
    pub seed: u64,
}

pub fn scripts() -> Vec<Script> {
    let list: [(&str, Behavior); 20] = [
        ("always-explore", Behavior::AlwaysExplore),
        ("always-explore-batch", Behavior::ExploreBatch),
        ("never-confirm", Behavior::SqlNeverConfirm),
        ("never-confirm-broken", Behavior::BrokenSql),
        ("refine-only", Behavior::RefineOnly),
        ("confirm-without-sql", Behavior::ConfirmWithoutSql),
        ("garbage", Behavior::Garbage),
        ("empty", Behavior::Empty),
        ("unclosed-fence", Behavior::UnclosedFence),
        ("oversized", Behavior::Oversized),
        ("token-heavy-500", Behavior::TokenHeavy(500)),
        ("token-heavy-1500", Behavior::TokenHeavy(1_500)),
        ("token-heavy-3000", Behavior::TokenHeavy(3_000)),
        ("token-heavy-4000", Behavior::TokenHeavy(4_000)),
        ("random-1", Behavior::Random),
        ("random-2", Behavior::Random),
        ("random-3", Behavior::Random),
        ("random-4", Behavior::Random),
        ("random-5", Behavior::Random),
        ("random-6", Behavior::Random),
    ];
    list.into_iter()
        .enumerate()
        .map(|(i, (name, behavior))| Script { name: name.to_string(), behavior, seed: 0xADD0 + i as u64 })
        .collect()
}

pub struct AdversarialBackend {
    behavior: Behavior,
    rng: Mutex<ChaCha8Rng>,
}

impl AdversarialBackend {
    pub fn new(script: &Script) -> Self {
        Self {
            behavior: script.behavior,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(script.seed)),
        }
    }
}

/// Never a confirmation, so a random mix cannot finish early.
const PRIMITIVES: [Behavior; 9] = [
    Behavior::AlwaysExplore,
    Behavior::ExploreBatch,
    Behavior::SqlNeverConfirm,
    Behavior::BrokenSql,
    Behavior::RefineOnly,
    Behavior::Garbage,
    Behavior::Empty,
    Behavior::UnclosedFence,
    Behavior::TokenHeavy(2_000),
];

fn reply(behavior: Behavior, rng: &mut ChaCha8Rng) -> (String, Option<u64>) {
    let n = rng.random_range(0..3);
    let text = match behavior {
        Behavior::AlwaysExplore | Behavior::TokenHeavy(_) => {
            format!("[EXPLORE]\n```sql\nSELECT id, name FROM t WHERE id > {n};\n```")
        }
        Behavior::ExploreBatch => "[EXPLORE]\n```sql\nSELECT * FROM t;\nSELECT COUNT(*) FROM t;\nSELECT name FROM t ORDER BY name;\n```".to_string(),
        Behavior::SqlNeverConfirm => format!("[SQL] ```sql\nSELECT COUNT(*) + {n} FROM t\n```"),
        Behavior::BrokenSql => "[SQL] ```sql\nSELECT missing_column FROM nowhere\n```".to_string(),
        Behavior::RefineOnly => "[REFINE] still thinking about it".to_string(),
        Behavior::ConfirmWithoutSql => "[CONFIRM] done".to_string(),
        Behavior::Garbage => {
            let len = rng.random_range(1..200);
            (0..len).map(|_| char::from(rng.random_range(0x20u8..0x7f))).collect()
        }
        Behavior::Empty => String::new(),
        Behavior::UnclosedFence => "[SQL] ```sql\nSELECT 1".to_string(),
        Behavior::Oversized => "[EXPLORE] ".to_string() + &"x".repeat(40_000),
        Behavior::Random => {
            let b = PRIMITIVES[rng.random_range(0..PRIMITIVES.len())];
            return reply(b, rng);
        }
    };
    let output = match behavior {
        Behavior::TokenHeavy(t) => Some(t),
        _ => None,
    };
    (text, output)
}

impl Backend for AdversarialBackend {
    fn id(&self) -> &str {
        "adversarial"
    }

    fn complete(&self, _request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let mut rng = self.rng.lock().expect("rng lock");
        let (content, output_tokens) = reply(self.behavior, &mut rng);
        Ok(BackendReply {
            content,
            input_tokens: None,
            output_tokens,
            truncated: false,
        })
    }
}
