"""DQN agent: configuration, root component, n-step post-processing, training and checkpoints."""
