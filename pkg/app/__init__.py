# pickcap: frame picking for video captioning
