//! Inference prompt template and its rendering.

use thiserror::Error;

pub const PLACEHOLDER_REF_TORCH: &str = "ref_arch_torch";
pub const PLACEHOLDER_REF_KERNEL: &str = "ref_arch_kernel";
pub const PLACEHOLDER_CODE: &str = "code";

const PLACEHOLDERS: [&str; 3] = [PLACEHOLDER_REF_TORCH, PLACEHOLDER_REF_KERNEL, PLACEHOLDER_CODE];

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template is missing placeholder ${0}")]
    Missing(&'static str),
    #[error("placeholder ${name} appears {count} times (expected once)")]
    Repeated { name: &'static str, count: usize },
}

/// Default kernel-generation prompt. Uses `$name` placeholders; `$$` is a
/// literal dollar sign.
pub const DEFAULT_TEMPLATE: &str = r#"You are a Machine Learning Engineer trying to write custom cuda kernels to replace the pytorch operators in the given architecture to get speedups.
You have complete freedom to choose the set of operators you want to replace. You may make the decision to replace some operators with custom cuda kernels and leave others unchanged. You may replace multiple operators with custom implementations, consider operator fusion opportunities (combining multiple operators into a single kernel, for example, combining matmul+relu), or algorithmic changes (such as online softmax). You are only limited by your imagination.

For [Imports], you will likely need but not limited to the following libraries:
```
import torch
import torch.nn as nn
import torch.nn.functional as F
import math
```

Here's an example to show you the syntax of inline embedding custom operators from the cuda kernel in torch:
The pytorch module needed to be optimize is:
```
$ref_arch_torch
```

The example new arch with custom cuda kernels looks like this:
```
$ref_arch_kernel
```

And the PyTorch code you need to optimize is:
```
$code
```
Optimize the architecture named Model with custom cuda kernels! Optimize the architecture named Model with custom cuda kernels! Name your optimized output architecture ModelNew. Output the new code in codeblocks. Please generate real code, NOT pseudocode, make sure the code compiles and is fully functional. Just output the new model code, no other text, and NO testing code!
"#;

/// Few-shot reference program shown in the default prompt.
pub const FEW_SHOT_TORCH: &str = r#"import torch
import torch.nn as nn
import torch.nn.functional as F


class Model(nn.Module):
    def __init__(self) -> None:
        super().__init__()

    def forward(self, a, b):
        return a + b


def get_inputs():
    # randomly generate input tensors based on the model architecture
    a = torch.randn(1, 128).cuda()
    b = torch.randn(1, 128).cuda()
    return [a, b]


def get_init_inputs():
    # randomly generate tensors required for initialization based on the model architecture
    return []"#;

/// Few-shot optimized counterpart of [`FEW_SHOT_TORCH`].
pub const FEW_SHOT_KERNEL: &str = r#"import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.cpp_extension import load_inline

# Define the custom CUDA kernel for element-wise addition
elementwise_add_source = """
#include <torch/extension.h>
#include <cuda_runtime.h>

__global__ void elementwise_add_kernel(const float* a, const float* b, float* out, int size) {
    int idx = blockIdx.x * blockDim.x + threadIdx.x;
    if (idx < size) {
        out[idx] = a[idx] + b[idx];
    }
}

torch::Tensor elementwise_add_cuda(torch::Tensor a, torch::Tensor b) {
    auto size = a.numel();
    auto out = torch::zeros_like(a);

    const int block_size = 256;
    const int num_blocks = (size + block_size - 1) / block_size;

    elementwise_add_kernel<<<num_blocks, block_size>>>(a.data_ptr<float>(), b.data_ptr<float>(), out.data_ptr<float>(), size);

    return out;
}
"""

elementwise_add_cpp_source = (
    "torch::Tensor elementwise_add_cuda(torch::Tensor a, torch::Tensor b);"
)

# Compile the inline CUDA code for element-wise addition
elementwise_add = load_inline(
    name="elementwise_add",
    cpp_sources=elementwise_add_cpp_source,
    cuda_sources=elementwise_add_source,
    functions=["elementwise_add_cuda"],
    verbose=True,
    extra_cflags=[""],
    extra_ldflags=[""],
)


class ModelNew(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.elementwise_add = elementwise_add

    def forward(self, a, b):
        return self.elementwise_add.elementwise_add_cuda(a, b)"#;

#[derive(Clone, Debug, PartialEq)]
enum Piece {
    Text(String),
    Slot(usize),
}

/// A validated prompt template holding each placeholder exactly once.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptTemplate {
    text: String,
    pieces: Vec<Piece>,
}

/// Splits on `$identifier`; `$$` becomes `$`. Unknown identifiers stay
/// literal.
fn tokenize(text: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut buf = String::new();
    let mut rest = text;
    while let Some(pos) = rest.find('$') {
        buf.push_str(&rest[..pos]);
        let after = &rest[pos + 1..];
        if let Some(stripped) = after.strip_prefix('$') {
            buf.push('$');
            rest = stripped;
            continue;
        }
        let ident_len = after
            .char_indices()
            .take_while(|&(i, c)| c == '_' || c.is_ascii_alphabetic() || (i > 0 && c.is_ascii_digit()))
            .map(|(i, c)| i + c.len_utf8())
            .last()
            .unwrap_or(0);
        let ident = &after[..ident_len];
        match PLACEHOLDERS.iter().position(|p| *p == ident) {
            Some(slot) => {
                if !buf.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut buf)));
                }
                pieces.push(Piece::Slot(slot));
            }
            None => {
                buf.push('$');
                buf.push_str(ident);
            }
        }
        rest = &after[ident_len..];
    }
    buf.push_str(rest);
    if !buf.is_empty() {
        pieces.push(Piece::Text(buf));
    }
    pieces
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, TemplateError> {
        let text = text.into();
        let pieces = tokenize(&text);
        for (slot, name) in PLACEHOLDERS.iter().enumerate() {
            let count = pieces.iter().filter(|p| **p == Piece::Slot(slot)).count();
            match count {
                0 => return Err(TemplateError::Missing(name)),
                1 => {}
                _ => return Err(TemplateError::Repeated { name, count }),
            }
        }
        Ok(PromptTemplate { text, pieces })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes all placeholders in a single pass, so substituted text is
    /// never re-scanned for placeholders.
    pub fn render(&self, ref_arch_torch: &str, ref_arch_kernel: &str, code: &str) -> String {
        let values = [ref_arch_torch, ref_arch_kernel, code];
        let mut out = String::with_capacity(self.text.len() + values.iter().map(|v| v.len()).sum::<usize>());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(i) => out.push_str(values[*i]),
            }
        }
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}
