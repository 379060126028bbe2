//! wasm-bindgen surface of the browser demo. All payloads are JSON strings;
//! the page in `www/` parses them and draws onto plain canvases.

mod demo;

use demo::DemoSession;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct WatchlistDemo {
    session: DemoSession,
}

#[wasm_bindgen]
impl WatchlistDemo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> WatchlistDemo {
        WatchlistDemo {
            session: DemoSession::new(),
        }
    }

    /// Generate a 2-D synthetic open-set benchmark; returns the input-space
    /// scatter as JSON.
    pub fn generate(&mut self, seed: u32, known: u32, per_class: u32, spread: f64) -> Result<String, JsError> {
        self.session
            .generate(seed as u64, known as usize, per_class as usize, spread)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// Train the adapter (2-D compact features); returns the training history
    /// and the learned feature-space scatter as JSON.
    #[allow(clippy::too_many_arguments)]
    pub fn train_adapter(
        &mut self,
        loss: &str,
        epochs: u32,
        learning_rate: f64,
        hidden1: u32,
        margin: f64,
        xi: f64,
        lambda: f64,
    ) -> Result<String, JsError> {
        self.session
            .train_adapter(
                loss,
                epochs as usize,
                learning_rate,
                hidden1 as usize,
                margin,
                xi,
                lambda,
            )
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// Enroll templates, score the probes, and return the O-ROC curve,
    /// TPIR@FPIR table and magnitude histogram as JSON.
    pub fn evaluate(&self, bins: u32) -> Result<String, JsError> {
        self.session
            .evaluate(bins as usize)
            .map_err(|e| JsError::new(&e.to_string()))
    }
}

impl Default for WatchlistDemo {
    fn default() -> Self {
        Self::new()
    }
}
