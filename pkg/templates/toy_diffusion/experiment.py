"""Denoising diffusion on four 2D toy datasets.

Trains a small MLP denoiser (DDPM objective, EMA weights) per dataset and
reports the final training loss plus a non-parametric KL estimate between
held-out real samples and generated samples.

Invoked as `python experiment.py --out_dir=run_i`. Optional overrides are
read from `experiment_config.json` in the working directory.
"""

import argparse
import json
import math
import os

import numpy as np
import torch
import torch.nn as nn

DEFAULTS = {
    "seed": 0,
    "train_steps": 3000,
    "batch_size": 256,
    "learning_rate": 1e-3,
    "hidden_dim": 128,
    "timesteps": 50,
    "ema_decay": 0.995,
    "eval_samples": 1000,
    "datasets": ["circle", "line", "moons", "dino"],
}

# outline control points for the 2D dinosaur, traced clockwise
DINO_OUTLINE = [
    (0.0, 0.0), (0.8, 0.3), (1.6, 0.5), (2.4, 0.6), (3.2, 0.9),
    (3.6, 1.6), (3.8, 2.4), (4.2, 2.7), (4.6, 2.6), (4.4, 2.2),
    (4.3, 1.5), (4.0, 0.8), (3.6, 0.2), (3.0, -0.3), (2.4, -0.6),
    (2.2, -1.4), (2.0, -0.7), (1.4, -0.5), (1.2, -1.3), (1.0, -0.6),
    (0.4, -0.4), (-0.4, -0.7), (-1.2, -1.2), (-1.4, -0.6), (-2.0, -0.2),
    (-2.8, 0.3), (-3.4, 1.0), (-3.8, 1.8), (-4.0, 1.2), (-3.6, 0.4),
    (-3.0, -0.4), (-2.2, -0.9), (-1.2, -1.6), (-0.4, -1.0),
]


def load_config():
    config = dict(DEFAULTS)
    if os.path.exists("experiment_config.json"):
        with open("experiment_config.json") as fh:
            config.update(json.load(fh))
    return config


def sample_dataset(name, n, generator):
    if name == "circle":
        theta = 2 * math.pi * torch.rand(n, generator=generator)
        radius = 1.0 + 0.05 * torch.randn(n, generator=generator)
        points = torch.stack([radius * torch.cos(theta), radius * torch.sin(theta)], dim=1)
    elif name == "line":
        x = 2.0 * torch.rand(n, generator=generator) - 1.0
        y = 0.8 * x + 0.08 * torch.randn(n, generator=generator)
        points = torch.stack([x, y], dim=1)
    elif name == "moons":
        half = n // 2
        theta1 = math.pi * torch.rand(half, generator=generator)
        theta2 = math.pi * torch.rand(n - half, generator=generator)
        upper = torch.stack([torch.cos(theta1), torch.sin(theta1)], dim=1)
        lower = torch.stack([1.0 - torch.cos(theta2), 0.5 - torch.sin(theta2)], dim=1)
        points = torch.cat([upper, lower], dim=0)
        points = points + 0.06 * torch.randn(points.shape, generator=generator)
        points = points - points.mean(dim=0, keepdim=True)
    elif name == "dino":
        outline = torch.tensor(DINO_OUTLINE, dtype=torch.float32) / 2.5
        segments = torch.cat([outline, outline[:1]], dim=0)
        lengths = (segments[1:] - segments[:-1]).norm(dim=1)
        probs = lengths / lengths.sum()
        idx = torch.multinomial(probs, n, replacement=True, generator=generator)
        frac = torch.rand(n, 1, generator=generator)
        points = segments[idx] + frac * (segments[idx + 1] - segments[idx])
        points = points + 0.03 * torch.randn(points.shape, generator=generator)
    else:
        raise ValueError(f"unknown dataset {name!r}")
    return points


def sinusoidal_embedding(values, dim, max_period=10_000.0):
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half) / max(half - 1, 1))
    args = values[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class Denoiser(nn.Module):
    """MLP denoiser over sinusoidal embeddings of the timestep and coords."""

    def __init__(self, hidden_dim, embed_dim=32):
        super().__init__()
        self.embed_dim = embed_dim
        in_dim = 3 * embed_dim
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden_dim),
            nn.GELU(),
            nn.Linear(hidden_dim, hidden_dim),
            nn.GELU(),
            nn.Linear(hidden_dim, 2),
        )

    def forward(self, x, t):
        parts = [
            sinusoidal_embedding(x[:, 0], self.embed_dim),
            sinusoidal_embedding(x[:, 1], self.embed_dim),
            sinusoidal_embedding(t.float(), self.embed_dim),
        ]
        return self.net(torch.cat(parts, dim=1))


class Diffusion:
    def __init__(self, timesteps):
        self.timesteps = timesteps
        self.betas = torch.linspace(1e-4, 0.02, timesteps)
        alphas = 1.0 - self.betas
        self.alpha_bars = torch.cumprod(alphas, dim=0)

    def add_noise(self, x0, t, noise):
        ab = self.alpha_bars[t][:, None]
        return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * noise

    @torch.no_grad()
    def sample(self, model, n, generator):
        x = torch.randn(n, 2, generator=generator)
        for step in reversed(range(self.timesteps)):
            t = torch.full((n,), step, dtype=torch.long)
            predicted = model(x, t)
            alpha = 1.0 - self.betas[step]
            ab = self.alpha_bars[step]
            mean = (x - self.betas[step] / torch.sqrt(1.0 - ab) * predicted) / torch.sqrt(alpha)
            if step > 0:
                x = mean + torch.sqrt(self.betas[step]) * torch.randn(n, 2, generator=generator)
            else:
                x = mean
        return x


def estimate_kl(real, generated):
    """k-NN estimate of KL(real || generated), both arrays (n, 2)."""
    from scipy.spatial import cKDTree

    real = np.asarray(real, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    n, d = real.shape
    m = generated.shape[0]
    real_tree = cKDTree(real)
    gen_tree = cKDTree(generated)
    r, _ = real_tree.query(real, k=2)
    r = np.maximum(r[:, 1], 1e-12)  # skip self-match
    s, _ = gen_tree.query(real, k=1)
    s = np.maximum(s, 1e-12)
    return float(d * np.mean(np.log(s / r)) + math.log(m / (n - 1)))


def train_dataset(name, config, out_dir):
    import zlib

    torch.manual_seed(config["seed"])
    generator = torch.Generator().manual_seed(config["seed"] + zlib.crc32(name.encode()) % 10_000)
    model = Denoiser(config["hidden_dim"])
    ema_model = Denoiser(config["hidden_dim"])
    ema_model.load_state_dict(model.state_dict())
    optimizer = torch.optim.AdamW(model.parameters(), lr=config["learning_rate"])
    diffusion = Diffusion(config["timesteps"])

    data = sample_dataset(name, 8192, generator)
    losses = []
    for step in range(config["train_steps"]):
        idx = torch.randint(0, data.shape[0], (config["batch_size"],), generator=generator)
        x0 = data[idx]
        t = torch.randint(0, config["timesteps"], (config["batch_size"],), generator=generator)
        noise = torch.randn(x0.shape, generator=generator)
        noisy = diffusion.add_noise(x0, t, noise)
        loss = ((model(noisy, t) - noise) ** 2).mean()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            for p_ema, p in zip(ema_model.parameters(), model.parameters()):
                p_ema.mul_(config["ema_decay"]).add_(p, alpha=1.0 - config["ema_decay"])
        losses.append(loss.item())

    ema_model.eval()
    n_eval = config["eval_samples"]
    generated = diffusion.sample(ema_model, n_eval, generator).numpy()
    held_out = sample_dataset(name, n_eval, generator).numpy()
    kl = estimate_kl(held_out, generated) if losses else float("nan")

    np.save(os.path.join(out_dir, f"{name}_samples.npy"), generated)
    np.save(os.path.join(out_dir, f"{name}_real.npy"), held_out)
    np.save(os.path.join(out_dir, f"{name}_losses.npy"), np.asarray(losses, dtype=np.float64))
    return {
        "final_train_loss": losses[-1] if losses else None,
        "estimated_kl": kl,
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out_dir", required=True)
    args = parser.parse_args()

    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    config = load_config()
    os.makedirs(args.out_dir, exist_ok=True)

    results = {}
    for name in config["datasets"]:
        print(f"training diffusion on {name}...", flush=True)
        results[name] = train_dataset(name, config, args.out_dir)
        print(f"  final_loss={results[name]['final_train_loss']} kl={results[name]['estimated_kl']}")

    with open(os.path.join(args.out_dir, "final_info.json"), "w") as fh:
        json.dump(results, fh, indent=1, sort_keys=True)
    print("done")


if __name__ == "__main__":
    main()
