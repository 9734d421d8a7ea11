#include <stdio.h>
#include <string.h>

#include "n2l.h"

int main(void) {
    enum { W = 16, H = 12 };
    uint8_t rgb[3 * W * H];
    for (int i = 0; i < 3 * W * H; i++) {
        rgb[i] = (uint8_t)(i * 7);
    }
    N2lEncodeParams params = n2l_encode_params_default();
    params.steps = 5;
    N2lBuffer *stream = NULL;
    if (n2l_encode_rgb8(&params, rgb, W, H, &stream) != N2L_STATUS_OK) {
        fprintf(stderr, "encode: %s\n", n2l_last_error());
        return 1;
    }
    N2lStreamInfo info;
    if (n2l_stream_info(n2l_buffer_data(stream), n2l_buffer_len(stream), &info) != N2L_STATUS_OK) {
        return 2;
    }
    N2lImage *img = NULL;
    if (n2l_decode(n2l_buffer_data(stream), n2l_buffer_len(stream), &img) != N2L_STATUS_OK) {
        return 3;
    }
    int ok = n2l_image_width(img) == W && n2l_image_height(img) == H && info.total_bytes == n2l_buffer_len(stream);
    n2l_image_free(img);
    n2l_buffer_free(stream);

    uint8_t junk[4] = {'J', 'U', 'N', 'K'};
    if (n2l_decode(junk, sizeof junk, &img) != N2L_STATUS_MALFORMED || img != NULL) {
        return 4;
    }
    if (n2l_last_error() == NULL || strlen(n2l_last_error()) == 0) {
        return 5;
    }
    printf("ok %s\n", n2l_version());
    return ok ? 0 : 6;
}
