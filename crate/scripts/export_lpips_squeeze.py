"""Export SqueezeNet 1.1 features plus LPIPS v0.1 linear heads for the LPIPS metric.

    pip install torch torchvision lpips safetensors
    python scripts/export_lpips_squeeze.py lpips_squeeze.safetensors
"""
import sys

import lpips
import torch
from safetensors.torch import save_file
from torchvision.models import SqueezeNet1_1_Weights, squeezenet1_1


def main(out: str) -> None:
    backbone = squeezenet1_1(weights=SqueezeNet1_1_Weights.IMAGENET1K_V1).eval()
    tensors = {k: v for k, v in backbone.state_dict().items() if k.startswith("features.")}
    heads = lpips.LPIPS(net="squeeze", version="0.1", verbose=False).state_dict()
    tensors.update({k: v for k, v in heads.items() if k.startswith("lin")})
    tensors = {k: v.detach().to(torch.float32).contiguous() for k, v in tensors.items()}
    save_file(tensors, out, metadata={"source": "torchvision squeezenet1_1 + lpips v0.1 heads"})
    print(f"wrote {len(tensors)} tensors to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "lpips_squeeze.safetensors")
