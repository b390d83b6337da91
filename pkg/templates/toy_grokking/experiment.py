"""Transformer training on synthetic modular arithmetic tasks.

Generates the full (a op b = c) table for each task modulo a prime, splits
it into train/validation, and trains a small decoder-only transformer per
task and seed (full-batch AdamW with strong weight decay). Reports losses,
validation accuracy, and the number of update steps required to reach
perfect validation accuracy; training stops early once it is reached.

Invoked as `python experiment.py --out_dir=run_i`. Optional overrides are
read from `experiment_config.json` in the working directory.
"""

import argparse
import json
import os

import numpy as np
import torch
import torch.nn as nn

DEFAULTS = {
    "prime": 23,
    "train_frac": 0.75,
    "steps": 1200,
    "eval_every": 25,
    "learning_rate": 3e-3,
    "weight_decay": 2.0,
    "d_model": 64,
    "n_heads": 4,
    "n_layers": 2,
    "stop_at_perfect": True,
    "seeds": [0, 1, 2],
    "tasks": ["x_plus_y", "x_minus_y", "x_times_y", "x_div_y"],
}


def load_config():
    config = dict(DEFAULTS)
    if os.path.exists("experiment_config.json"):
        with open("experiment_config.json") as fh:
            config.update(json.load(fh))
    return config


def modinv(b, p):
    return pow(b, p - 2, p)


def build_task(task, p):
    """All (a, b, c) triples of the operation table."""
    triples = []
    for a in range(p):
        b_range = range(1, p) if task == "x_div_y" else range(p)
        for b in b_range:
            if task == "x_plus_y":
                c = (a + b) % p
            elif task == "x_minus_y":
                c = (a - b) % p
            elif task == "x_times_y":
                c = (a * b) % p
            elif task == "x_div_y":
                c = (a * modinv(b, p)) % p
            else:
                raise ValueError(f"unknown task {task!r}")
            triples.append((a, b, c))
    return triples


class DecoderBlock(nn.Module):
    def __init__(self, d_model, n_heads):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model), nn.GELU(), nn.Linear(4 * d_model, d_model)
        )

    def forward(self, x, mask):
        h = self.ln1(x)
        attended, _ = self.attn(h, h, h, attn_mask=mask, need_weights=False)
        x = x + attended
        return x + self.mlp(self.ln2(x))


class TinyTransformer(nn.Module):
    def __init__(self, vocab, d_model, n_heads, n_layers, seq_len=4):
        super().__init__()
        self.token_embedding = nn.Embedding(vocab, d_model)
        self.position_embedding = nn.Embedding(seq_len, d_model)
        self.blocks = nn.ModuleList(DecoderBlock(d_model, n_heads) for _ in range(n_layers))
        self.final_norm = nn.LayerNorm(d_model)
        self.head = nn.Linear(d_model, vocab)
        causal = torch.triu(torch.full((seq_len, seq_len), float("-inf")), diagonal=1)
        self.register_buffer("causal_mask", causal)

    def forward(self, tokens):
        positions = torch.arange(tokens.shape[1], device=tokens.device)
        x = self.token_embedding(tokens) + self.position_embedding(positions)[None]
        for block in self.blocks:
            x = block(x, self.causal_mask)
        return self.head(self.final_norm(x)[:, -1])


def encode(triples, p):
    """Sequences [a, OP, b, EQ] with target c. OP and EQ are extra tokens."""
    op_token, eq_token = p, p + 1
    arr = np.asarray(triples, dtype=np.int64)
    tokens = np.stack(
        [arr[:, 0], np.full(len(arr), op_token), arr[:, 1], np.full(len(arr), eq_token)],
        axis=1,
    )
    return torch.from_numpy(tokens), torch.from_numpy(arr[:, 2].copy())


def train_one(task, seed, config, out_dir):
    p = config["prime"]
    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed)

    tokens, targets = encode(build_task(task, p), p)
    order = torch.randperm(len(targets), generator=generator)
    n_train = int(config["train_frac"] * len(targets))
    train_idx, val_idx = order[:n_train], order[n_train:]

    model = TinyTransformer(p + 2, config["d_model"], config["n_heads"], config["n_layers"])
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config["learning_rate"], weight_decay=config["weight_decay"]
    )
    loss_fn = nn.CrossEntropyLoss()

    train_losses, val_losses, val_accs, eval_steps = [], [], [], []
    steps_to_perfect = None

    def evaluate(step):
        nonlocal steps_to_perfect
        model.eval()
        with torch.no_grad():
            logits = model(tokens[val_idx])
            val_losses.append(loss_fn(logits, targets[val_idx]).item())
            acc = (logits.argmax(dim=1) == targets[val_idx]).float().mean().item()
        model.train()
        val_accs.append(acc)
        eval_steps.append(step)
        if acc == 1.0 and steps_to_perfect is None:
            steps_to_perfect = step
        return acc

    for step in range(1, config["steps"] + 1):
        logits = model(tokens[train_idx])
        loss = loss_fn(logits, targets[train_idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        train_losses.append(loss.item())
        if step % config["eval_every"] == 0:
            acc = evaluate(step)
            if acc == 1.0 and config["stop_at_perfect"]:
                break
    if config["steps"] > 0 and (not eval_steps or eval_steps[-1] != len(train_losses)):
        evaluate(len(train_losses))

    prefix = os.path.join(out_dir, f"{task}_seed{seed}")
    np.save(f"{prefix}_train_losses.npy", np.asarray(train_losses))
    np.save(f"{prefix}_val_losses.npy", np.asarray(val_losses))
    np.save(f"{prefix}_val_accs.npy", np.asarray(val_accs))
    np.save(f"{prefix}_eval_steps.npy", np.asarray(eval_steps))
    return {
        "final_train_loss": train_losses[-1] if train_losses else None,
        "final_val_loss": val_losses[-1] if val_losses else None,
        "final_val_acc": val_accs[-1] if val_accs else None,
        "steps_to_perfect_val_acc": steps_to_perfect,
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out_dir", required=True)
    args = parser.parse_args()

    torch.set_num_threads(1)
    config = load_config()
    os.makedirs(args.out_dir, exist_ok=True)

    results = {}
    if config["steps"] > 0:
        for task in config["tasks"]:
            seed_results = {}
            for seed in config["seeds"]:
                print(f"training {task} with seed {seed}...", flush=True)
                seed_results[str(seed)] = train_one(task, seed, config, args.out_dir)
                print(f"  {seed_results[str(seed)]}")
            means = {}
            for key in ("final_train_loss", "final_val_loss", "final_val_acc"):
                values = [r[key] for r in seed_results.values() if r[key] is not None]
                means[key] = sum(values) / len(values) if values else None
            reached = [
                r["steps_to_perfect_val_acc"]
                for r in seed_results.values()
                if r["steps_to_perfect_val_acc"] is not None
            ]
            means["steps_to_perfect_val_acc"] = sum(reached) / len(reached) if reached else None
            results[task] = {"seeds": seed_results, "means": means}

    with open(os.path.join(args.out_dir, "final_info.json"), "w") as fh:
        json.dump(results, fh, indent=1, sort_keys=True)
    print("done")


if __name__ == "__main__":
    main()
