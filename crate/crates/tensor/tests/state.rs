use lungxai_tensor::io::{from_safetensors_bytes, to_safetensors_bytes};
use lungxai_tensor::nn::{load_state_dict, state_dict, BatchNorm2d, Conv2d, Conv2dConfig, Module, Slot, SlotMut};
use lungxai_tensor::{Tensor, TensorError};
use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Pair {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl Module for Pair {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv.visit(&lungxai_tensor::nn::join(prefix, "conv"), f);
        self.bn.visit(&lungxai_tensor::nn::join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        self.conv.visit_mut(&lungxai_tensor::nn::join(prefix, "conv"), f);
        self.bn.visit_mut(&lungxai_tensor::nn::join(prefix, "bn"), f);
    }
}

fn pair(seed: u64) -> Pair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Pair {
        conv: Conv2d::new(2, 3, 3, Conv2dConfig { bias: true, ..Default::default() }, &mut rng),
        bn: BatchNorm2d::new(3),
    }
}

#[test]
fn state_survives_safetensors() {
    let a = pair(1);
    let bytes = to_safetensors_bytes(&state_dict(&a, "m")).unwrap();
    let mut b = pair(2);
    load_state_dict(&mut b, "m", &from_safetensors_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(state_dict(&a, "m"), state_dict(&b, "m"));
}

#[test]
fn load_rejects_missing_and_misshapen() {
    let mut b = pair(2);
    let mut state = state_dict(&pair(1), "");
    state.remove("bn.running_var");
    assert!(matches!(load_state_dict(&mut b, "", &state), Err(TensorError::MissingTensor(n)) if n == "bn.running_var"));
    state.insert("bn.running_var".into(), Tensor::zeros(IxDyn(&[4])));
    assert!(matches!(load_state_dict(&mut b, "", &state), Err(TensorError::StateShape { .. })));
}
