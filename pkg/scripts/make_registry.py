"""Emit src/m4fw/fixtures/registry.json from the benchmark table rows below.

Columns: id, category, task, application, dataset, baseline, result text, metric,
inputs, output, path, prompt target (E/B/None), template.
A trailing '*' in the result text marks Jetson Orin results (others on A100).
"""

import json
from pathlib import Path

PHOTO = "There is a photo of a [Image_label]."
ACAP = "Give a very short caption of the audio, the caption have 16 words at most."
ICAP = "Give a very short caption of the image, the caption have 16 words at most."
HAR = "The human is [Activity_label]."
VQA = "Answer the following question according to the image."
SLU = "Give the intent of the spoken command."

ROWS = [
    ("T1", "NLP", "Input word prediction", "Input method (GBoard)", "PTB", "RNN", "0.17*", "accuracy", ["text"], "text", 2, "B", "Predict the next word of the following sentence."),
    ("T2", "NLP", "Question answering", "Private assistant (Siri)", "SQuAD v2.0", "RoBERTa", "0.79*", "F1", ["text"], "text", 2, "B", "Answer the question according to the following passage."),
    ("T3", "NLP", "Question answering", "Private assistant (Siri)", "TyDi QA", "AraELECTRA", "0.87", "F1", ["text"], "text", 2, "B", "Answer the question according to the following passage."),
    ("T4", "NLP", "Machine translation", "Translator (Google Translate)", "wmt22 en-de", "Transformer", "0.34*", "BLEU", ["text"], "text", 2, "B", "Translate the following sentences from [SRC_language] to [TGT_language]."),
    ("T5", "NLP", "Emoji prediction", "Input method (GBoard)", "tweet_eval", "RoBERTa", "0.33*", "accuracy", ["text"], "text", 2, "B", "Predict the emoji that best fits the following tweet."),
    ("T6", "NLP", "Emotion prediction", "Conversational analytics (Clarabridge)", "go_emotion", "RoBERTa", "0.57*", "accuracy", ["text"], "text", 2, "B", "Classify the emotion expressed in the following text."),
    ("T7", "NLP", "Sentiment analysis", "Conversational analytics (Clarabridge)", "tweet_eval", "RoBERTa", "0.77*", "accuracy", ["text"], "text", 2, "B", "Is the sentiment of the following tweet negative, neutral or positive?"),
    ("T8", "NLP", "Text classification", "Spam SMS filtering (Truecaller)", "ag_news", "BERT", "0.93*", "accuracy", ["text"], "text", 2, "B", "Classify the topic of the following news article."),
    ("T9", "NLP", "Text classification", "Spam SMS filtering (Truecaller)", "SST2", "DistilBERT", "0.91*", "accuracy", ["text"], "text", 2, "B", "Is the following movie review negative or positive?"),
    ("T10", "NLP", "Grammatical error correction", "Writing assistant (Grammarly)", "JFLEG", "FLAN-t5", "0.68*", "BLEU", ["text"], "text", 2, "B", "Correct the grammatical errors in the following sentence."),
    ("T11", "NLP", "Text summary", "Reading assistant (ChatPDF)", "CNN Daily Mail", "BART", "0.43*", "ROUGE1", ["text"], "text", 2, "B", "Summarize the following article in a few sentences."),
    ("T12", "NLP", "Code document generation", "Code editor (Javadoc)", "CodeSearchNet", "CodeT5-base", "0.33*", "ROUGE1", ["text"], "text", 2, "B", "Write a short documentation comment for the following code."),
    ("T13", "NLP", "Code generation", "Code editor (Copilot)", "Shellcode_IA32", "CodeBERT", "0.92", "BLEU", ["text"], "text", 2, "B", "Write an assembly code according to the [sentence] requirements."),
    ("T14", "CV", "Object detection", "Augmented Reality (Google Lens)", "COCO", "Libra-rcnn", "0.43*", "mAP", ["image"], "label", 3, "E", "There is a photo of a [Object_label]."),
    ("T15", "CV", "Object detection", "Augmented Reality (Google Lens)", "LVIS", "X-Paste", "0.51", "AP", ["image"], "label", 3, "E", "There is a photo of a [Object_label]."),
    ("T16", "CV", "Image retrieval", "Image searcher (Google Photos)", "Clothes Retrieval", "Resnet50-arcface", "0.90*", "recall", ["image"], "label", 3, "E", "There is a photo of a [Clothes_label]."),
    ("T17", "CV", "Super-resolution", "Video/Image super-resolution (VSCO)", "set5", "Real-ESRGAN", "0.82*", "SSIM", ["image"], "image", 4, None, None),
    ("T18", "CV", "Styler transfer", "Painting & Beatifying (Meitu)", "COCO, Wikiart", "StyleGAN-nada", "0.23", "CLIP-score", ["image"], "image", 1, "B", "Render the image in the style of [Style]."),
    ("T19", "CV", "Semantic segmentation", "Smart camera (Segmentix)", "ADE20K-150", "Deeplabv3plus", "0.43*", "mIoU", ["image"], "label", 3, "E", "There is a [Region_label] in the photo."),
    ("T20", "CV", "Semantic segmentation", "Smart camera (Segmentix)", "PASCAL VOC", "Deeplabv3plus", "0.79*", "mIoU", ["image"], "label", 3, "E", "There is a [Region_label] in the photo."),
    ("T21", "CV", "Optical character recognition", "Intelligent document automation software (Ocrolus)", "Rendered SST2", "CLIP", "0.71", "accuracy", ["image"], "label", 3, "E", "A [Sentiment_label] review of a movie."),
    ("T22", "CV", "Image classification", "Album management (Google Photos)", "CIFAR100", "GFNet-XS", "0.89", "accuracy", ["image"], "label", 3, "E", PHOTO),
    ("T23", "CV", "Image classification", "Album management (Google Photos)", "ImageNet", "Resnet-152", "0.79", "accuracy", ["image"], "label", 3, "E", PHOTO),
    ("T24", "CV", "Traffic sign classification", "Intelligent transportation (Waze)", "GTSRB", "MicronNet", "0.98", "accuracy", ["image"], "label", 3, "E", "There is a traffic sign of [Sign_label]."),
    ("T25", "CV", "Vehicle re-identification", "Surveillance camera (AI Re-ID)", "Veri776", "MSINet", "0.96", "rank", ["image"], "label", 3, "E", "There is a photo of a [Vehicle_label] vehicle."),
    ("T26", "CV", "Gender recognition", "Smart camera (Face++)", "Adience", "MiVOLO-D1", "0.96", "accuracy", ["image"], "label", 3, "E", "There is a photo of a [Gender_label]."),
    ("T27", "CV", "Location recognition", "Navigation search (Google Maps)", "Country211", "CLIP", "0.46", "accuracy", ["image"], "label", 3, "E", "A photo taken in [Country_label]."),
    ("T28", "CV", "Pose estimation", "AI fitness coach (Keep)", "AP-10K", "ViTPose", "0.69", "AP", ["image"], "text", 1, "B", "Give the keypoint coordinates of the animal in the image."),
    ("T29", "CV", "Video classification", "Video player (YouTube)", "kinetics400", "SlowFast", "0.79", "accuracy", ["video"], "label", 3, "E", "There is a video of [Video_label]."),
    ("T30", "CV", "Crowd Counting", "Smart camera (Fitness Tracking)", "UCF-QNRF", "CSS-CCNN", "437", "MAE", ["image"], "text", 1, "B", "How many people are there in the image?"),
    ("T31", "CV", "Image matting", "Virtual backgrounds (Zoom)", "RefMatte-RW100", "MDETR", "0.06", "MSE", ["image"], "image", 4, None, None),
    ("T32", "Audio", "Automatic speech recognition", "Private assistant (Siri)", "LibriSpeech", "CTC+attention", "3.16%*", "WER", ["audio_intent"], "text", 1, "B", "Transcribe the speech in the audio."),
    ("T33", "Audio", "Spoken language understanding", "Private assistant (Siri)", "FSC", "Transformer", "0.37%", "WER", ["audio_intent"], "text", 1, "B", SLU),
    ("T34", "Audio", "Spoken language understanding", "Private assistant (Siri)", "SLURP", "CRDNN", "0.82*", "accuracy", ["audio_intent"], "text", 1, "B", SLU),
    ("T35", "Audio", "Emotion recognition", "Emoji recommendation (WeChat)", "IEMOCAP", "ECAPA-TDNN", "0.64*", "accuracy", ["audio_background"], "label", 3, "E", "The speaker sounds [Emotion_label]."),
    ("T36", "Audio", "Audio classification", "Music discovery (Shazam)", "ESC-50", "ACDNet", "0.87", "accuracy", ["audio_intent"], "label", 3, "E", "This is a sound of [Audio_label]."),
    ("T37", "Audio", "Keyword spotting", "Private assistant (Siri)", "Speech command", "Cnn-trad-fpool3", "0.88*", "accuracy", ["audio_intent"], "label", 3, "E", "The speaker says [Keyword_label]."),
    ("T38", "Sensing", "Human activity recognition", "AI fitness coach (Keep)", "Using Smartphones", "TS-TCC", "0.90", "accuracy", ["imu"], "label", 3, "E", HAR),
    ("T39", "Sensing", "Human activity recognition", "AI fitness coach (Keep)", "HHAR", "LIMU-BERT", "0.84", "accuracy", ["imu"], "label", 3, "E", HAR),
    ("T40", "Sensing", "Human activity recognition", "AI fitness coach (Keep)", "MotionSense", "LIMU-BERT", "0.91", "accuracy", ["imu"], "label", 3, "E", HAR),
    ("T41", "Multimodal", "Text-to-speech", "Voice broadcast (WeChat reading)", "LJSpeech", "Transformer", "3.26", "MCD", ["text"], "speech", 4, None, None),
    ("T42", "Multimodal", "Audio captioning", "Hearing-impaired accessibility (Ava)", "Clotho", "Transformer", "0.52*", "BLEU", ["audio_background"], "text", 1, "E", ACAP),
    ("T43", "Multimodal", "Audio captioning", "Hearing-impaired accessibility (Ava)", "AudioSet", "Transformer", "0.64", "BLEU", ["audio_background"], "text", 1, "E", ACAP),
    ("T44", "Multimodal", "Image captioning", "Visual-impaired accessibility (Supersence)", "MSCOCO'14", "LSTM", "0.73*", "BLEU", ["image"], "text", 1, "E", ICAP),
    ("T45", "Multimodal", "Image captioning", "Visual-impaired accessibility (Supersence)", "Flickr8k", "LSTM", "0.58", "BLEU", ["image"], "text", 1, "E", ICAP),
    ("T46", "Multimodal", "Text-to-image retrieval", "Image search (Google Photos)", "Flickr8k", "NAPReg", "0.39", "recall", ["image", "text"], "label", 3, "E", "[Caption]"),
    ("T47", "Multimodal", "Text-to-image retrieval", "Image search (Google Photos)", "Flickr30k", "CLIP", "0.69", "recall", ["image", "text"], "label", 3, "E", "[Caption]"),
    ("T48", "Multimodal", "Audio/Text-to-image generation", "Art creation (Verb Art)", "VGGSound", "Wav2clip", "99.89", "FID", ["audio_background"], "image", 1, "B", "Generate an image that matches the audio."),
    ("T49", "Multimodal", "Visual question answering", "Visual-impaired accessibility (Answerables)", "VQA v2.0", "MUTAN", "0.63", "accuracy", ["image", "text"], "text", 1, "B", VQA),
    ("T50", "Multimodal", "Visual question answering", "Visual-impaired accessibility (Answerables)", "VizWiz", "MUTAN", "0.52", "accuracy", ["image", "text"], "text", 1, "B", VQA),
]

TARGET = {"E": "text-embedding", "B": "backbone", None: None}


def parse_result(text):
    jetson = text.endswith("*")
    core = text.rstrip("*")
    value = float(core[:-1]) / 100 if core.endswith("%") else float(core)
    return value, ("jetson-orin" if jetson else "a100")


def main():
    out = []
    for (tid, cat, task, app, ds, base, res, metric, inputs, output, path, tgt, tpl) in ROWS:
        value, device = parse_result(res)
        out.append({
            "id": tid, "category": cat, "task": task, "application": app, "dataset": ds,
            "input_modality": inputs, "output_modality": output, "path": path,
            "prompt": None if tpl is None else {"target": TARGET[tgt], "template": tpl},
            "metric": metric, "baseline_model": base, "baseline_result": value,
            "baseline_result_text": res, "result_device": device,
        })
    dest = Path(__file__).resolve().parents[1] / "src" / "m4fw" / "fixtures" / "registry.json"
    dest.write_text(json.dumps(out, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote {len(out)} tasks to {dest}")


if __name__ == "__main__":
    main()
