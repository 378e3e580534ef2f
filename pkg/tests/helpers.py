from esm_tts.esm import ESMConfig, ESMParams


def random_esm(rng, t=3, d=8, heads=2, hidden=12, kernel=1, scale=0.3):
    """Random modulator with perturbed norms/biases plus an input and two embeddings."""
    cfg = ESMConfig(d, heads, hidden, kernel)
    p = ESMParams.init(cfg, int(rng.integers(2**31)))
    for arr in p.arrays().values():
        arr += rng.normal(0.0, scale, arr.shape)
    return p, rng.normal(size=(t, d)), rng.normal(size=d), rng.normal(size=d)
