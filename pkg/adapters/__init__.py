"""LoRA factor pairs and their recovery into full backbone dimensions."""
