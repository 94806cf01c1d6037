"""Bus holding control: simulator, conventional and learned controllers."""
