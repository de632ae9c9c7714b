def longest_word(text):
    return max(text.split(), key=len)


def last_word(text):
    words = text.split()
    return words[len(words)]


def vowel_count(text):
    return sum(1 for ch in text.lower() if ch in "aeiou")
